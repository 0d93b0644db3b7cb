//! Discrete-event simulation of periodic LoRaWAN uplinks heard by several
//! forwarding gateways and deduplicated by a network server.
//!
//! Scenarios are TOML files:
//!
//! ```toml
//! name = "example"
//! seed = 7
//! duration_s = 3600.0
//! start_time = "2019-07-26T18:00:00Z"   # optional
//! mac_overhead_bytes = 13                # optional
//!
//! [duty]                                 # optional, default 1 %
//! duty_cycle = 0.01
//!
//! [channel]                              # optional, every key has a default
//! exponent = 2.32
//! shadowing_sigma_db = 6.0
//!
//! [[gateways]]
//! gateway_id = "gw-1"
//! position = { lat_deg = 53.55, lon_deg = 9.97 }
//!
//! [[devices]]
//! device_id = "sensor-1"
//! sf = 10
//! app_payload_bytes = 8
//! interval_s = 60.0
//! position = { lat_deg = 53.55, lon_deg = 9.96 }
//! # or: waypoints = [{ t_s = 0.0, lat_deg = ..., lon_deg = ... }, ...]
//! ```
//!
//! Shadowing draws are keyed by `(seed, device, transmission, gateway)`
//! rather than drawn in sequence, so adding or removing a gateway leaves the
//! draws of every other link unchanged.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fieldlog::{GatewayReception, Timestamp, UplinkRecord};
use crate::geo::{haversine_m, ChannelModel, GeoError, GeoPoint};
use crate::metrics::{DeviceLoss, GatewayReachStats, LossReport, ReachSummary};
use crate::phy::{
    self, DutyCyclePolicy, PhyError, PhyParams, SpreadingFactor, DEFAULT_MAC_OVERHEAD,
};

/// Names of the scenarios shipped with the crate.
pub const BUNDLED_SCENARIOS: [&str; 3] = ["dom_with_gateway", "dom_without_gateway", "port"];

pub const GROUND_TRUTH_HEADER: [&str; 6] = [
    "device_id",
    "fcnt",
    "tx_time_s",
    "gateway_id",
    "rssi_dbm",
    "received",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(
        "device {device_id}: interval {interval_s} s is below the duty-cycle minimum of {min_interval_s:.2} s"
    )]
    IntervalTooShort {
        device_id: String,
        interval_s: f64,
        min_interval_s: f64,
    },
    #[error("device {0}: no position or waypoints")]
    NoPosition(String),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_s: f64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub alt_m: f64,
}

impl Waypoint {
    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat_deg: self.lat_deg,
            lon_deg: self.lon_deg,
            alt_m: self.alt_m,
        }
    }
}

/// A periodically transmitting end device. Exactly one of `position` and
/// `waypoints` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<Waypoint>,
    pub app_payload_bytes: usize,
    pub interval_s: f64,
    pub sf: SpreadingFactor,
    #[serde(default)]
    pub start_offset_s: f64,
    /// Extra link gain, e.g. negative for body-worn devices near the ground.
    #[serde(default)]
    pub gain_offset_db: f64,
}

impl DeviceSpec {
    pub fn phy_params(&self, mac_overhead_bytes: usize) -> PhyParams {
        PhyParams::eu868(self.sf, self.app_payload_bytes + mac_overhead_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub gateway_id: String,
    pub position: GeoPoint,
    #[serde(default)]
    pub gain_offset_db: f64,
}

fn default_start_time() -> Timestamp {
    // 2019-07-26T18:00:00Z
    Timestamp::from_millis(1_564_164_000_000)
}

fn default_mac_overhead() -> usize {
    DEFAULT_MAC_OVERHEAD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Wall-clock instant of simulation time zero.
    #[serde(default = "default_start_time")]
    pub start_time: Timestamp,
    #[serde(default = "default_mac_overhead")]
    pub mac_overhead_bytes: usize,
    #[serde(default)]
    pub duty: DutyCyclePolicy,
    #[serde(default)]
    pub channel: ChannelModel,
    pub gateways: Vec<GatewaySpec>,
    pub devices: Vec<DeviceSpec>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// One of [`BUNDLED_SCENARIOS`].
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "dom_with_gateway" => include_str!("../scenarios/dom_with_gateway.toml"),
            "dom_without_gateway" => include_str!("../scenarios/dom_without_gateway.toml"),
            "port" => include_str!("../scenarios/port.toml"),
            _ => return None,
        };
        Some(Scenario::from_toml_str(text).expect("bundled scenarios are valid"))
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut issues = Vec::new();
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            issues.push(format!(
                "duration_s: must be positive, got {}",
                self.duration_s
            ));
        }
        if let Err(e) = self.duty.validate() {
            issues.push(format!("duty.duty_cycle: {e}"));
        }
        if let Err(e) = self.channel.validate() {
            issues.push(e.to_string());
        }
        if self.gateways.is_empty() {
            issues.push("gateways: at least one gateway is required".into());
        }
        let mut ids = HashSet::new();
        for (i, gw) in self.gateways.iter().enumerate() {
            if gw.gateway_id.is_empty() {
                issues.push(format!("gateways[{i}].gateway_id: empty"));
            }
            if !ids.insert(gw.gateway_id.as_str()) {
                issues.push(format!(
                    "gateways[{i}].gateway_id: duplicate id {}",
                    gw.gateway_id
                ));
            }
            if let Err(e) = gw.position.validate() {
                issues.push(format!("gateways[{i}].position: {e}"));
            }
        }
        let mut ids = HashSet::new();
        for (i, dev) in self.devices.iter().enumerate() {
            let key = |field: &str| format!("devices[{i}].{field}");
            if dev.device_id.is_empty() {
                issues.push(format!("{}: empty", key("device_id")));
            }
            if !ids.insert(dev.device_id.as_str()) {
                issues.push(format!(
                    "{}: duplicate id {}",
                    key("device_id"),
                    dev.device_id
                ));
            }
            match (&dev.position, dev.waypoints.is_empty()) {
                (Some(p), true) => {
                    if let Err(e) = p.validate() {
                        issues.push(format!("{}: {e}", key("position")));
                    }
                }
                (None, false) => {
                    for (j, w) in dev.waypoints.iter().enumerate() {
                        if let Err(e) = w.point().validate() {
                            issues.push(format!("{}[{j}]: {e}", key("waypoints")));
                        }
                        if !w.t_s.is_finite() {
                            issues.push(format!("{}[{j}].t_s: not finite", key("waypoints")));
                        }
                    }
                    if dev.waypoints.windows(2).any(|w| w[1].t_s < w[0].t_s) {
                        issues.push(format!("{}: must be sorted by t_s", key("waypoints")));
                    }
                }
                (Some(_), false) => issues.push(format!(
                    "{}: set either position or waypoints, not both",
                    key("position")
                )),
                (None, true) => issues.push(format!(
                    "{}: position or waypoints required",
                    key("position")
                )),
            }
            if !(dev.start_offset_s >= 0.0) || !dev.start_offset_s.is_finite() {
                issues.push(format!("{}: must be >= 0", key("start_offset_s")));
            }
            let phy = dev.phy_params(self.mac_overhead_bytes);
            match phy::min_interval(&phy, &self.duty) {
                Err(e) => issues.push(format!("{}: {e}", key("app_payload_bytes"))),
                Ok(min) if !(dev.interval_s >= min) || !dev.interval_s.is_finite() => {
                    issues.push(format!(
                        "{}: device {} interval {} s is below the duty-cycle minimum of {:.2} s",
                        key("interval_s"),
                        dev.device_id,
                        dev.interval_s,
                        min
                    ))
                }
                Ok(_) => {}
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(issues))
        }
    }

    pub fn gateway_registry(&self) -> crate::fieldlog::GatewayRegistry {
        let mut registry = crate::fieldlog::GatewayRegistry::new();
        for gw in &self.gateways {
            registry.insert(gw.gateway_id.clone(), gw.position);
        }
        registry
    }
}

/// A scheduled uplink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    /// Unwrapped transmission index, 0-based.
    pub seq: u64,
    pub fcnt: u16,
    pub tx_time_s: f64,
}

fn fcnt_of(seq: u64) -> u16 {
    (seq % 65_536) as u16
}

fn check_interval(
    dev: &DeviceSpec,
    duty: &DutyCyclePolicy,
    mac_overhead_bytes: usize,
) -> Result<(), SimError> {
    let min_interval_s = phy::min_interval(&dev.phy_params(mac_overhead_bytes), duty)?;
    if dev.interval_s >= min_interval_s {
        Ok(())
    } else {
        Err(SimError::IntervalTooShort {
            device_id: dev.device_id.clone(),
            interval_s: dev.interval_s,
            min_interval_s,
        })
    }
}

/// Transmissions at `start_offset_s + k·interval_s` for every start time
/// strictly before `duration_s`. Frame counters start at zero and wrap at
/// 2^16.
pub fn schedule_transmissions(
    dev: &DeviceSpec,
    duty: &DutyCyclePolicy,
    duration_s: f64,
    mac_overhead_bytes: usize,
) -> Result<Vec<Transmission>, SimError> {
    check_interval(dev, duty, mac_overhead_bytes)?;
    let mut out = Vec::new();
    for seq in 0.. {
        let tx_time_s = dev.start_offset_s + seq as f64 * dev.interval_s;
        if tx_time_s >= duration_s {
            break;
        }
        out.push(Transmission {
            seq,
            fcnt: fcnt_of(seq),
            tx_time_s,
        });
    }
    Ok(out)
}

/// Position at time `t_s`: the fixed position, or linear interpolation
/// between the bracketing waypoints, clamped to the first/last waypoint.
pub fn device_position_at(dev: &DeviceSpec, t_s: f64) -> Result<GeoPoint, SimError> {
    if dev.waypoints.is_empty() {
        return dev
            .position
            .ok_or_else(|| SimError::NoPosition(dev.device_id.clone()));
    }
    let wps = &dev.waypoints;
    let after = wps.partition_point(|w| w.t_s <= t_s);
    if after == 0 {
        return Ok(wps[0].point());
    }
    if after == wps.len() {
        return Ok(wps[wps.len() - 1].point());
    }
    let (a, b) = (&wps[after - 1], &wps[after]);
    let f = (t_s - a.t_s) / (b.t_s - a.t_s);
    let lerp = |x: f64, y: f64| x + (y - x) * f;
    Ok(GeoPoint {
        lat_deg: lerp(a.lat_deg, b.lat_deg),
        lon_deg: lerp(a.lon_deg, b.lon_deg),
        alt_m: lerp(a.alt_m, b.alt_m),
    })
}

/// Standard normal draw determined only by its key.
pub fn shadow_draw(seed: u64, device_id: &str, seq: u64, gateway_id: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(b"lorafield/shadowing/v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((device_id.len() as u64).to_le_bytes());
    hasher.update(device_id.as_bytes());
    hasher.update(seq.to_le_bytes());
    hasher.update((gateway_id.len() as u64).to_le_bytes());
    hasher.update(gateway_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    StandardNormal.sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayOutcome {
    pub gateway_id: String,
    pub received: bool,
    pub rssi_dbm: f64,
}

/// What actually happened to one transmission, heard or not.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEntry {
    pub device_id: String,
    pub fcnt: u16,
    pub seq: u64,
    pub tx_time_s: f64,
    pub position: GeoPoint,
    /// One entry per scenario gateway, in scenario order.
    pub outcomes: Vec<GatewayOutcome>,
}

impl GroundTruthEntry {
    pub fn received_by(&self) -> impl Iterator<Item = &GatewayOutcome> {
        self.outcomes.iter().filter(|o| o.received)
    }

    pub fn was_received(&self) -> bool {
        self.outcomes.iter().any(|o| o.received)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruth {
    pub fn transmissions(&self) -> usize {
        self.entries.len()
    }

    pub fn received_transmissions(&self) -> usize {
        self.entries.iter().filter(|e| e.was_received()).count()
    }

    /// Fraction of all scheduled transmissions that no gateway heard.
    pub fn schedule_loss(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        1.0 - self.received_transmissions() as f64 / self.transmissions() as f64
    }

    /// Loss per device over the window from its first to its last received
    /// transmission, counted on unwrapped sequence numbers. This is what a
    /// frame-counter analysis of the uplink log can observe.
    pub fn observed_window_loss(&self) -> LossReport {
        let mut received: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.was_received()) {
            received.entry(&e.device_id).or_default().push(e.seq);
        }
        let per_device = received
            .into_iter()
            .map(|(dev, seqs)| {
                let lo = *seqs.iter().min().expect("non-empty");
                let hi = *seqs.iter().max().expect("non-empty");
                (
                    dev.to_string(),
                    DeviceLoss::new(hi - lo + 1, seqs.len() as u64),
                )
            })
            .collect();
        LossReport::from_devices(per_device, Vec::new())
    }

    /// Gateways per received transmission.
    pub fn reach(&self) -> GatewayReachStats {
        let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for e in &self.entries {
            let n = e.received_by().count();
            if n > 0 {
                counts.entry(&e.device_id).or_default().push(n);
            }
        }
        let summarize = |v: &[usize]| ReachSummary {
            messages: v.len() as u64,
            min: *v.iter().min().expect("non-empty"),
            mean: v.iter().sum::<usize>() as f64 / v.len() as f64,
            max: *v.iter().max().expect("non-empty"),
        };
        let all: Vec<usize> = counts.values().flatten().copied().collect();
        GatewayReachStats {
            per_device: counts
                .iter()
                .map(|(d, v)| (d.to_string(), summarize(v)))
                .collect(),
            overall: (!all.is_empty()).then(|| summarize(&all)),
        }
    }

    /// Transmissions each gateway received.
    pub fn gateway_receptions(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            for o in e.received_by() {
                *counts.entry(o.gateway_id.clone()).or_default() += 1;
            }
        }
        counts
    }

    /// One row per (transmission, gateway).
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(GROUND_TRUTH_HEADER)?;
        for e in &self.entries {
            for o in &e.outcomes {
                w.write_record([
                    e.device_id.as_str(),
                    &e.fcnt.to_string(),
                    &e.tx_time_s.to_string(),
                    &o.gateway_id,
                    &o.rssi_dbm.to_string(),
                    if o.received { "true" } else { "false" },
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOutput {
    /// Deduplicated uplinks, ordered by transmission time then device id.
    pub records: Vec<UplinkRecord>,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    tx_time_s: f64,
    device: usize,
    seq: u64,
}

/// Orders events by time, then device id (via the sorted device index).
impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.tx_time_s
            .total_cmp(&other.tx_time_s)
            .then(self.device.cmp(&other.device))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs the scenario to completion. The result depends only on the scenario
/// contents, including the seed.
pub fn run_scenario(s: &Scenario) -> Result<SimOutput, SimError> {
    s.validate()?;

    let mut devices: Vec<&DeviceSpec> = s.devices.iter().collect();
    devices.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    let airtimes = devices
        .iter()
        .map(|d| {
            check_interval(d, &s.duty, s.mac_overhead_bytes)?;
            Ok(phy::time_on_air(&d.phy_params(s.mac_overhead_bytes))?)
        })
        .collect::<Result<Vec<f64>, SimError>>()?;

    let mut queue = BinaryHeap::new();
    for (i, d) in devices.iter().enumerate() {
        if d.start_offset_s < s.duration_s {
            queue.push(Reverse(Event {
                tx_time_s: d.start_offset_s,
                device: i,
                seq: 0,
            }));
        }
    }

    let sigma = s.channel.shadowing_sigma_db;
    let mut out = SimOutput::default();
    while let Some(Reverse(event)) = queue.pop() {
        let dev = devices[event.device];
        let position = device_position_at(dev, event.tx_time_s)?;
        let rx_time = s
            .start_time
            .offset_secs(event.tx_time_s + airtimes[event.device]);
        let fcnt = fcnt_of(event.seq);

        let mut outcomes = Vec::with_capacity(s.gateways.len());
        let mut receptions = Vec::new();
        for gw in &s.gateways {
            let draw = if sigma > 0.0 {
                sigma * shadow_draw(s.seed, &dev.device_id, event.seq, &gw.gateway_id)
            } else {
                0.0
            };
            let distance = haversine_m(&position, &gw.position);
            let link = s.channel.receive(
                dev.sf,
                distance,
                dev.gain_offset_db + gw.gain_offset_db,
                draw,
            )?;
            if link.received {
                receptions.push(GatewayReception {
                    gateway_id: gw.gateway_id.clone(),
                    rssi_dbm: link.rssi_dbm,
                    snr_db: None,
                    rx_time,
                    gateway_position: Some(gw.position),
                });
            }
            outcomes.push(GatewayOutcome {
                gateway_id: gw.gateway_id.clone(),
                received: link.received,
                rssi_dbm: link.rssi_dbm,
            });
        }

        if !receptions.is_empty() {
            receptions.sort_by(|a, b| a.gateway_id.cmp(&b.gateway_id));
            out.records.push(UplinkRecord {
                device_id: dev.device_id.clone(),
                fcnt,
                app_payload_bytes: dev.app_payload_bytes,
                sf: dev.sf,
                rx_time,
                receptions,
                device_position: Some(position),
            });
        }
        out.ground_truth.entries.push(GroundTruthEntry {
            device_id: dev.device_id.clone(),
            fcnt,
            seq: event.seq,
            tx_time_s: event.tx_time_s,
            position,
            outcomes,
        });

        let next = Event {
            tx_time_s: dev.start_offset_s + (event.seq + 1) as f64 * dev.interval_s,
            device: event.device,
            seq: event.seq + 1,
        };
        if next.tx_time_s < s.duration_s {
            queue.push(Reverse(next));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SITE: GeoPoint = GeoPoint {
        lat_deg: 53.5555,
        lon_deg: 9.9705,
        alt_m: 0.0,
    };

    fn fixed_device(id: &str, interval_s: f64) -> DeviceSpec {
        DeviceSpec {
            device_id: id.into(),
            position: Some(SITE),
            waypoints: Vec::new(),
            app_payload_bytes: 11,
            interval_s,
            sf: SpreadingFactor::new(9).unwrap(),
            start_offset_s: 0.0,
            gain_offset_db: 0.0,
        }
    }

    fn gateway(id: &str, position: GeoPoint) -> GatewaySpec {
        GatewaySpec {
            gateway_id: id.into(),
            position,
            gain_offset_db: 0.0,
        }
    }

    fn scenario(devices: Vec<DeviceSpec>, gateways: Vec<GatewaySpec>, sigma: f64) -> Scenario {
        Scenario {
            name: "test".into(),
            description: String::new(),
            seed: 42,
            duration_s: 300.0,
            start_time: default_start_time(),
            mac_overhead_bytes: DEFAULT_MAC_OVERHEAD,
            duty: DutyCyclePolicy::eu868(),
            channel: ChannelModel {
                shadowing_sigma_db: sigma,
                ..Default::default()
            },
            gateways,
            devices,
        }
    }

    #[test]
    fn schedule_floor_count() {
        let txs = schedule_transmissions(
            &fixed_device("d", 30.0),
            &DutyCyclePolicy::eu868(),
            300.0,
            13,
        )
        .unwrap();
        assert_eq!(txs.len(), 10);
        assert_eq!(
            txs.iter().map(|t| t.fcnt).collect::<Vec<_>>(),
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(txs[9].tx_time_s, 270.0);
    }

    #[test]
    fn schedule_rejects_illegal_interval() {
        let err = schedule_transmissions(
            &fixed_device("tracker-7", 20.0),
            &DutyCyclePolicy::eu868(),
            300.0,
            13,
        )
        .unwrap_err();
        match &err {
            SimError::IntervalTooShort {
                device_id,
                min_interval_s,
                ..
            } => {
                assert_eq!(device_id, "tracker-7");
                assert!((min_interval_s - 20.58).abs() <= 0.01);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("20.58"));
    }

    #[test]
    fn schedule_short_duration_and_offset() {
        let txs = schedule_transmissions(
            &fixed_device("d", 30.0),
            &DutyCyclePolicy::eu868(),
            15.0,
            13,
        )
        .unwrap();
        assert_eq!(txs.len(), 1);
        let mut late = fixed_device("d", 30.0);
        late.start_offset_s = 7.5;
        let txs = schedule_transmissions(&late, &DutyCyclePolicy::eu868(), 15.0, 13).unwrap();
        assert_eq!(txs[0].tx_time_s, 7.5);
    }

    #[test]
    fn fcnt_wraps() {
        assert_eq!(fcnt_of(65_535), 65_535);
        assert_eq!(fcnt_of(65_536), 0);
        assert_eq!(fcnt_of(65_537), 1);
    }

    #[test]
    fn positions_interpolate_and_clamp() {
        let a = GeoPoint::new(53.50, 9.90).unwrap();
        let b = GeoPoint::new(53.60, 10.10).unwrap();
        let mut dev = fixed_device("t", 30.0);
        assert_eq!(device_position_at(&dev, 1234.0).unwrap(), SITE);
        dev.position = None;
        dev.waypoints = vec![
            Waypoint {
                t_s: 0.0,
                lat_deg: a.lat_deg,
                lon_deg: a.lon_deg,
                alt_m: 0.0,
            },
            Waypoint {
                t_s: 100.0,
                lat_deg: b.lat_deg,
                lon_deg: b.lon_deg,
                alt_m: 0.0,
            },
        ];
        let mid = device_position_at(&dev, 50.0).unwrap();
        assert!((mid.lat_deg - 53.55).abs() < 1e-12);
        assert!((mid.lon_deg - 10.0).abs() < 1e-12);
        assert_eq!(device_position_at(&dev, 150.0).unwrap(), b);
        assert_eq!(device_position_at(&dev, -5.0).unwrap(), a);
        dev.waypoints.clear();
        assert!(matches!(
            device_position_at(&dev, 0.0),
            Err(SimError::NoPosition(_))
        ));
    }

    #[test]
    fn co_located_gateway_hears_everything() {
        let s = scenario(
            vec![fixed_device("d", 30.0)],
            vec![gateway("gw", SITE)],
            0.0,
        );
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.records.len(), 10);
        assert!(out
            .records
            .iter()
            .all(|r| r.receptions.len() == 1 && r.validate().is_ok()));
        assert_eq!(out.ground_truth.schedule_loss(), 0.0);
    }

    #[test]
    fn distant_gateway_hears_nothing() {
        let far = GeoPoint::new(62.5, 9.97).unwrap();
        assert!(haversine_m(&SITE, &far) > 990_000.0);
        let s = scenario(vec![fixed_device("d", 30.0)], vec![gateway("gw", far)], 0.0);
        let out = run_scenario(&s).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.ground_truth.transmissions(), 10);
        assert_eq!(out.ground_truth.schedule_loss(), 1.0);
    }

    #[test]
    fn co_located_pair_is_deduplicated() {
        let s = scenario(
            vec![fixed_device("d", 30.0)],
            vec![gateway("gw-b", SITE), gateway("gw-a", SITE)],
            0.0,
        );
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.records.len(), 10);
        for r in &out.records {
            let ids: Vec<_> = r.receptions.iter().map(|g| g.gateway_id.as_str()).collect();
            assert_eq!(ids, ["gw-a", "gw-b"]);
        }
    }

    #[test]
    fn validation_lists_offending_keys() {
        let mut s = scenario(
            vec![fixed_device("d", 20.0), fixed_device("d", 30.0)],
            vec![],
            0.0,
        );
        s.duration_s = 0.0;
        let SimError::Invalid(issues) = s.validate().unwrap_err() else {
            panic!()
        };
        let text = issues.join("\n");
        assert!(text.contains("duration_s"));
        assert!(text.contains("gateways"));
        assert!(text.contains("devices[0].interval_s"));
        assert!(text.contains("20.58"));
        assert!(text.contains("devices[1].device_id: duplicate"));
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        let text = r#"
            seed = 1
            duration_s = 60.0
            colour = "blue"
            gateways = []
            devices = []
        "#;
        let err = Scenario::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn bundled_scenarios_load() {
        for name in BUNDLED_SCENARIOS {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, name);
        }
        assert!(Scenario::bundled("nope").is_none());
    }

    #[test]
    fn shadow_draws_are_keyed() {
        let a = shadow_draw(1, "d", 5, "gw");
        assert_eq!(a, shadow_draw(1, "d", 5, "gw"));
        assert_ne!(a, shadow_draw(2, "d", 5, "gw"));
        assert_ne!(a, shadow_draw(1, "d", 6, "gw"));
        assert_ne!(a, shadow_draw(1, "d", 5, "gw2"));
        // length prefixes keep ("ab","c") and ("a","bc") apart
        assert_ne!(shadow_draw(1, "ab", 0, "c"), shadow_draw(1, "a", 0, "bc"));
    }

    #[test]
    fn ground_truth_csv_rows() {
        let s = scenario(
            vec![fixed_device("d", 30.0)],
            vec![
                gateway("gw", SITE),
                gateway("far", GeoPoint::new(62.5, 9.97).unwrap()),
            ],
            0.0,
        );
        let out = run_scenario(&s).unwrap();
        let mut buf = Vec::new();
        out.ground_truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "device_id,fcnt,tx_time_s,gateway_id,rssi_dbm,received"
        );
        assert_eq!(lines.len(), 1 + 10 * 2);
        assert!(lines[1].starts_with("d,0,0,gw,") && lines[1].ends_with(",true"));
        assert!(lines[2].starts_with("d,0,0,far,") && lines[2].ends_with(",false"));
    }

    fn ring_scenario(seed: u64, n_gw: usize, sigma: f64) -> Scenario {
        let gateways = (0..n_gw)
            .map(|i| {
                let angle = i as f64;
                let r = 0.01 + 0.012 * i as f64;
                gateway(
                    &format!("gw{i}"),
                    GeoPoint::new(
                        SITE.lat_deg + r * angle.sin(),
                        SITE.lon_deg + r * angle.cos(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let mut devices = vec![fixed_device("s1", 40.0), fixed_device("s2", 45.0)];
        devices[1].start_offset_s = 3.0;
        let mut tracker = fixed_device("t1", 30.0);
        tracker.position = None;
        tracker.waypoints = vec![
            Waypoint {
                t_s: 0.0,
                lat_deg: 53.55,
                lon_deg: 9.96,
                alt_m: 0.0,
            },
            Waypoint {
                t_s: 600.0,
                lat_deg: 53.57,
                lon_deg: 9.99,
                alt_m: 0.0,
            },
        ];
        devices.push(tracker);
        let mut s = scenario(devices, gateways, sigma);
        s.seed = seed;
        s.duration_s = 900.0;
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn simulation_invariants(seed in any::<u64>(), n_gw in 1usize..5, sigma in prop_oneof![Just(0.0), 2.0f64..10.0]) {
            let s = ring_scenario(seed, n_gw, sigma);
            let out = run_scenario(&s).unwrap();
            prop_assert_eq!(&run_scenario(&s).unwrap(), &out);

            let gt = &out.ground_truth;
            let silent = gt.entries.iter().filter(|e| !e.was_received()).count();
            prop_assert_eq!(out.records.len() + silent, gt.transmissions());

            for r in &out.records {
                prop_assert!(r.validate().is_ok());
            }
            for w in gt.entries.windows(2) {
                prop_assert!((w[0].tx_time_s, &w[0].device_id) <= (w[1].tx_time_s, &w[1].device_id));
            }
            for dev in &s.devices {
                let toa = phy::time_on_air(&dev.phy_params(13)).unwrap();
                let times: Vec<f64> = gt.entries.iter().filter(|e| e.device_id == dev.device_id).map(|e| e.tx_time_s).collect();
                for w in times.windows(2) {
                    prop_assert!(w[1] - w[0] >= toa / s.duty.duty_cycle - 1e-9);
                }
            }

            // dropping a gateway never adds records
            if n_gw > 1 {
                let mut fewer = s.clone();
                fewer.gateways.remove(0);
                prop_assert!(run_scenario(&fewer).unwrap().records.len() <= out.records.len());
            }
        }
    }
}
