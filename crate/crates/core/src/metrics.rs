//! Reliability metrics computed from an uplink log.
//!
//! Four families:
//!
//! * gateway reach: how many gateways heard each message (min/mean/max);
//! * gateway share: fraction of observed messages each gateway received,
//!   against its distance from the devices;
//! * inter-arrival CDF: gaps between consecutive receptions of a device,
//!   binned in multiples of the target send interval;
//! * loss: frame-counter based expected vs received counts.
//!
//! Every aggregate is built from integer counts so that results are
//! bit-identical regardless of record order or partitioning. [`report`]
//! evaluates sequentially, [`MetricsFold`] is the mergeable accumulator used
//! by [`report_parallel`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fieldlog::{GatewayRegistry, Timestamp, UplinkRecord};
use crate::geo::{haversine_m, GeoPoint};

/// Default inter-arrival guard as a fraction of the target interval.
pub const DEFAULT_GUARD_FRACTION: f64 = 0.1;

/// Backward frame-counter jumps larger than this are a counter wrap.
pub const FCNT_WRAP_THRESHOLD: i64 = 32_768;

const FCNT_MODULUS: i64 = 65_536;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("target interval must be positive, got {0} s")]
    InvalidTargetInterval(f64),
    #[error("guard fraction must be in [0, 1), got {0}")]
    InvalidGuard(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReachSummary {
    pub messages: u64,
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ReachAcc {
    messages: u64,
    total: u64,
    min: usize,
    max: usize,
}

impl ReachAcc {
    fn push(&mut self, count: usize) {
        if self.messages == 0 {
            self.min = count;
            self.max = count;
        } else {
            self.min = self.min.min(count);
            self.max = self.max.max(count);
        }
        self.messages += 1;
        self.total += count as u64;
    }

    fn merge(&mut self, other: &ReachAcc) {
        if other.messages == 0 {
            return;
        }
        if self.messages == 0 {
            *self = *other;
            return;
        }
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.messages += other.messages;
        self.total += other.total;
    }

    fn summary(&self) -> Option<ReachSummary> {
        (self.messages > 0).then(|| ReachSummary {
            messages: self.messages,
            min: self.min,
            mean: self.total as f64 / self.messages as f64,
            max: self.max,
        })
    }
}

/// Per-message gateway counts, aggregated per device and overall.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GatewayReachStats {
    pub per_device: BTreeMap<String, ReachSummary>,
    /// `None` for an empty log.
    pub overall: Option<ReachSummary>,
}

impl GatewayReachStats {
    pub fn is_empty(&self) -> bool {
        self.overall.is_none()
    }

    fn from_accs(accs: &BTreeMap<String, ReachAcc>) -> Self {
        let mut overall = ReachAcc::default();
        let per_device = accs
            .iter()
            .filter_map(|(dev, acc)| {
                overall.merge(acc);
                acc.summary().map(|s| (dev.clone(), s))
            })
            .collect();
        GatewayReachStats {
            per_device,
            overall: overall.summary(),
        }
    }
}

pub fn gateway_reach(records: &[UplinkRecord]) -> GatewayReachStats {
    let mut accs: BTreeMap<String, ReachAcc> = BTreeMap::new();
    for r in records {
        accs.entry(r.device_id.clone())
            .or_default()
            .push(r.receptions.len());
    }
    GatewayReachStats::from_accs(&accs)
}

/// Source of reference positions for devices whose records carry none.
pub trait DevicePositions {
    fn position(&self, device_id: &str) -> Option<GeoPoint>;
}

impl DevicePositions for BTreeMap<String, GeoPoint> {
    fn position(&self, device_id: &str) -> Option<GeoPoint> {
        self.get(device_id).copied()
    }
}

/// Resolver that knows no device positions.
pub struct NoDevicePositions;

impl DevicePositions for NoDevicePositions {
    fn position(&self, _: &str) -> Option<GeoPoint> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatewayShareRow {
    pub gateway_id: String,
    /// `None` when the gateway position could not be resolved.
    pub distance_m: Option<f64>,
    pub messages: u64,
    pub share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GatewayShare {
    /// Sorted by distance, unknown distances last.
    pub rows: Vec<GatewayShareRow>,
    /// Messages observed network-wide; the share denominator.
    pub observed_messages: u64,
    /// Median device position the distances are measured from.
    pub reference_position: Option<GeoPoint>,
    pub diagnostics: Vec<String>,
}

impl GatewayShare {
    pub fn row(&self, gateway_id: &str) -> Option<&GatewayShareRow> {
        self.rows.iter().find(|r| r.gateway_id == gateway_id)
    }
}

/// Component-wise median; even counts average the two middle values.
pub fn median_position(points: &[GeoPoint]) -> Option<GeoPoint> {
    if points.is_empty() {
        return None;
    }
    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            (v[mid - 1] + v[mid]) / 2.0
        }
    }
    Some(GeoPoint {
        lat_deg: median(points.iter().map(|p| p.lat_deg).collect()),
        lon_deg: median(points.iter().map(|p| p.lon_deg).collect()),
        alt_m: median(points.iter().map(|p| p.alt_m).collect()),
    })
}

fn build_share(
    observed_messages: u64,
    gateway_messages: &BTreeMap<String, u64>,
    inline_positions: &BTreeMap<String, Vec<GeoPoint>>,
    device_points: &[GeoPoint],
    registry: &GatewayRegistry,
) -> GatewayShare {
    let reference_position = median_position(device_points);
    let mut diagnostics = Vec::new();
    if reference_position.is_none() && !gateway_messages.is_empty() {
        diagnostics.push("no device position known; distances unavailable".to_string());
    }
    let mut rows: Vec<GatewayShareRow> = gateway_messages
        .iter()
        .map(|(gw, &messages)| {
            let gw_position = registry
                .get(gw)
                .copied()
                .or_else(|| inline_positions.get(gw).and_then(|p| median_position(p)));
            if gw_position.is_none() {
                diagnostics.push(format!("gateway {gw}: position unknown"));
            }
            let distance_m = match (reference_position, gw_position) {
                (Some(d), Some(g)) => Some(haversine_m(&d, &g)),
                _ => None,
            };
            GatewayShareRow {
                gateway_id: gw.clone(),
                distance_m,
                messages,
                share: messages as f64 / observed_messages as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.distance_m, b.distance_m) {
        (Some(x), Some(y)) => x
            .total_cmp(&y)
            .then_with(|| a.gateway_id.cmp(&b.gateway_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.gateway_id.cmp(&b.gateway_id),
    });
    GatewayShare {
        rows,
        observed_messages,
        reference_position,
        diagnostics,
    }
}

/// Share of observed messages per gateway and its distance to the devices.
///
/// The denominator is the number of messages seen by any gateway, not the
/// number sent, because real logs carry no send counts. Distances are taken
/// from the median of all per-record device positions (falling back to
/// `devices` for records without one) to each gateway's registry position,
/// or, failing that, the position the log carries inline for it.
pub fn gateway_share(
    records: &[UplinkRecord],
    registry: &GatewayRegistry,
    devices: &dyn DevicePositions,
) -> GatewayShare {
    let mut gateway_messages: BTreeMap<String, u64> = BTreeMap::new();
    let mut inline_positions: BTreeMap<String, Vec<GeoPoint>> = BTreeMap::new();
    let mut device_points = Vec::new();
    for r in records {
        if let Some(p) = r.device_position.or_else(|| devices.position(&r.device_id)) {
            device_points.push(p);
        }
        for g in &r.receptions {
            *gateway_messages.entry(g.gateway_id.clone()).or_default() += 1;
            if let Some(p) = g.gateway_position {
                inline_positions
                    .entry(g.gateway_id.clone())
                    .or_default()
                    .push(p);
            }
        }
    }
    build_share(
        records.len() as u64,
        &gateway_messages,
        &inline_positions,
        &device_points,
        registry,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfBin {
    /// Gap length in target intervals (1 = arrived on schedule).
    pub k: u64,
    pub cumulative_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InterArrivalCdf {
    pub target_interval_s: f64,
    /// Number of pooled gaps.
    pub samples: u64,
    /// One bin per occupied `k`, ascending.
    pub bins: Vec<CdfBin>,
}

impl InterArrivalCdf {
    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    /// Fraction of gaps with index ≤ `k`.
    pub fn fraction_within(&self, k: u64) -> f64 {
        self.bins
            .iter()
            .take_while(|b| b.k <= k)
            .last()
            .map_or(0.0, |b| b.cumulative_fraction)
    }

    fn from_histogram(target_interval_s: f64, histogram: &BTreeMap<u64, u64>) -> Self {
        let samples: u64 = histogram.values().sum();
        let mut running = 0;
        let bins = histogram
            .iter()
            .map(|(&k, &n)| {
                running += n;
                CdfBin {
                    k,
                    cumulative_fraction: running as f64 / samples as f64,
                }
            })
            .collect();
        InterArrivalCdf {
            target_interval_s,
            samples,
            bins,
        }
    }
}

/// Inter-arrival binning parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InterArrivalConfig {
    pub target_interval_s: f64,
    /// Jitter allowance as a fraction of the target interval.
    pub guard_fraction: f64,
    /// Per-device target intervals overriding `target_interval_s`.
    pub device_targets: BTreeMap<String, f64>,
}

impl InterArrivalConfig {
    pub fn new(target_interval_s: f64) -> Self {
        InterArrivalConfig {
            target_interval_s,
            guard_fraction: DEFAULT_GUARD_FRACTION,
            device_targets: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for &t in std::iter::once(&self.target_interval_s).chain(self.device_targets.values()) {
            if !(t > 0.0) || !t.is_finite() {
                return Err(MetricsError::InvalidTargetInterval(t));
            }
        }
        if !(0.0..1.0).contains(&self.guard_fraction) {
            return Err(MetricsError::InvalidGuard(self.guard_fraction));
        }
        Ok(())
    }

    /// `(target, guard)` in milliseconds for a device.
    fn binning_ms(&self, device_id: &str) -> (i64, i64) {
        let target = self
            .device_targets
            .get(device_id)
            .copied()
            .unwrap_or(self.target_interval_s);
        let target_ms = ((target * 1000.0).round() as i64).max(1);
        let guard_ms = (self.guard_fraction * target * 1000.0).round() as i64;
        (target_ms, guard_ms)
    }
}

/// `max(1, ceil((Δ − guard) / target))` on whole milliseconds.
pub fn interval_index(delta_ms: i64, target_ms: i64, guard_ms: i64) -> u64 {
    let excess = delta_ms - guard_ms;
    if excess <= 0 {
        return 1;
    }
    (((excess + target_ms - 1) / target_ms) as u64).max(1)
}

fn add_gaps(
    histogram: &mut BTreeMap<u64, u64>,
    times: &mut [Timestamp],
    target_ms: i64,
    guard_ms: i64,
) {
    times.sort_unstable();
    for w in times.windows(2) {
        let k = interval_index(w[1].millis() - w[0].millis(), target_ms, guard_ms);
        *histogram.entry(k).or_default() += 1;
    }
}

/// Pooled inter-arrival CDF using each device's own gaps.
pub fn interarrival_cdf_with(
    records: &[UplinkRecord],
    config: &InterArrivalConfig,
) -> Result<InterArrivalCdf, MetricsError> {
    config.validate()?;
    let mut per_device: BTreeMap<&str, Vec<Timestamp>> = BTreeMap::new();
    for r in records {
        per_device.entry(&r.device_id).or_default().push(r.rx_time);
    }
    let mut histogram = BTreeMap::new();
    for (dev, mut times) in per_device {
        let (target_ms, guard_ms) = config.binning_ms(dev);
        add_gaps(&mut histogram, &mut times, target_ms, guard_ms);
    }
    Ok(InterArrivalCdf::from_histogram(
        config.target_interval_s,
        &histogram,
    ))
}

/// Inter-arrival CDF with the default 10 % guard.
pub fn interarrival_cdf(
    records: &[UplinkRecord],
    target_interval_s: f64,
) -> Result<InterArrivalCdf, MetricsError> {
    interarrival_cdf_with(records, &InterArrivalConfig::new(target_interval_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviceLoss {
    pub expected: u64,
    pub received: u64,
    pub loss: f64,
}

impl DeviceLoss {
    pub fn new(expected: u64, received: u64) -> Self {
        DeviceLoss {
            expected,
            received,
            loss: if expected == 0 {
                0.0
            } else {
                1.0 - received as f64 / expected as f64
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub per_device: BTreeMap<String, DeviceLoss>,
    /// Weighted by expected counts; `None` for an empty log.
    pub overall: Option<DeviceLoss>,
    pub diagnostics: Vec<String>,
}

impl LossReport {
    pub fn from_devices(
        per_device: BTreeMap<String, DeviceLoss>,
        diagnostics: Vec<String>,
    ) -> Self {
        let overall = (!per_device.is_empty()).then(|| {
            let expected = per_device.values().map(|d| d.expected).sum();
            let received = per_device.values().map(|d| d.received).sum();
            DeviceLoss::new(expected, received)
        });
        LossReport {
            per_device,
            overall,
            diagnostics,
        }
    }
}

/// Expected and received counts for one device from its `(rx_time, fcnt)`
/// arrivals. Counters are unrolled in arrival order; a jump of more than half
/// the counter space is read as a wrap in the opposite direction.
fn device_loss(
    device_id: &str,
    arrivals: &mut [(Timestamp, u16)],
    diagnostics: &mut Vec<String>,
) -> DeviceLoss {
    arrivals.sort_unstable();
    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    let mut unrolled: i64 = 0;
    let mut prev: Option<u16> = None;
    for &(_, fcnt) in arrivals.iter() {
        if let Some(p) = prev {
            let mut delta = i64::from(fcnt) - i64::from(p);
            if delta < -FCNT_WRAP_THRESHOLD {
                delta += FCNT_MODULUS;
            } else if delta > FCNT_WRAP_THRESHOLD {
                delta -= FCNT_MODULUS;
            }
            unrolled += delta;
        } else {
            unrolled = i64::from(fcnt);
        }
        prev = Some(fcnt);
        if !seen.insert(unrolled) {
            duplicates.insert(fcnt);
        }
    }
    for fcnt in duplicates {
        diagnostics.push(format!(
            "device {device_id}: fcnt {fcnt} received more than once, counted once"
        ));
    }
    match (seen.first(), seen.last()) {
        (Some(lo), Some(hi)) => DeviceLoss::new((hi - lo + 1) as u64, seen.len() as u64),
        _ => DeviceLoss::new(0, 0),
    }
}

/// Frame-counter based loss per device and overall.
pub fn loss(records: &[UplinkRecord]) -> LossReport {
    let mut per_device: BTreeMap<&str, Vec<(Timestamp, u16)>> = BTreeMap::new();
    for r in records {
        per_device
            .entry(&r.device_id)
            .or_default()
            .push((r.rx_time, r.fcnt));
    }
    let mut diagnostics = Vec::new();
    let per_device = per_device
        .into_iter()
        .map(|(dev, mut arrivals)| {
            (
                dev.to_string(),
                device_loss(dev, &mut arrivals, &mut diagnostics),
            )
        })
        .collect();
    LossReport::from_devices(per_device, diagnostics)
}

/// Inputs for [`report`] beyond the records themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub interarrival: InterArrivalConfig,
    pub registry: GatewayRegistry,
    /// Fallback device positions for records without one.
    pub device_positions: BTreeMap<String, GeoPoint>,
}

impl ReportConfig {
    pub fn new(target_interval_s: f64) -> Self {
        ReportConfig {
            interarrival: InterArrivalConfig::new(target_interval_s),
            registry: GatewayRegistry::new(),
            device_positions: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub records: u64,
    pub reach: GatewayReachStats,
    pub share: GatewayShare,
    pub interarrival: InterArrivalCdf,
    pub loss: LossReport,
}

impl MetricsReport {
    pub fn diagnostics(&self) -> impl Iterator<Item = &str> {
        self.share
            .diagnostics
            .iter()
            .chain(&self.loss.diagnostics)
            .map(String::as_str)
    }

    pub fn write_reach_csv<W: Write>(&self, sink: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["device_id", "min", "mean", "max"])?;
        let rows = self.reach.per_device.iter().map(|(d, s)| (d.as_str(), s));
        for (dev, s) in rows.chain(self.reach.overall.iter().map(|s| ("*", s))) {
            w.write_record([
                dev,
                &s.min.to_string(),
                &s.mean.to_string(),
                &s.max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_share_csv<W: Write>(&self, sink: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["gateway_id", "distance_m", "share"])?;
        for row in &self.share.rows {
            let distance = row.distance_m.map(|d| d.to_string()).unwrap_or_default();
            w.write_record([row.gateway_id.as_str(), &distance, &row.share.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_interarrival_csv<W: Write>(&self, sink: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["k", "cumulative_fraction"])?;
        for bin in &self.interarrival.bins {
            w.write_record([bin.k.to_string(), bin.cumulative_fraction.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_loss_csv<W: Write>(&self, sink: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["device_id", "expected", "received", "loss"])?;
        let rows = self.loss.per_device.iter().map(|(d, l)| (d.as_str(), l));
        for (dev, l) in rows.chain(self.loss.overall.iter().map(|l| ("*", l))) {
            w.write_record([
                dev,
                &l.expected.to_string(),
                &l.received.to_string(),
                &l.loss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `reach.csv`, `gateway_share.csv`, `interarrival.csv` and
    /// `loss.csv` into `dir`.
    pub fn write_csv_files(&self, dir: &Path) -> Result<(), MetricsError> {
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        self.write_reach_csv(open("reach.csv")?)?;
        self.write_share_csv(open("gateway_share.csv")?)?;
        self.write_interarrival_csv(open("interarrival.csv")?)?;
        self.write_loss_csv(open("loss.csv")?)?;
        Ok(())
    }
}

/// All four metric families, evaluated sequentially.
pub fn report(
    records: &[UplinkRecord],
    config: &ReportConfig,
) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        records: records.len() as u64,
        reach: gateway_reach(records),
        share: gateway_share(records, &config.registry, &config.device_positions),
        interarrival: interarrival_cdf_with(records, &config.interarrival)?,
        loss: loss(records),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
struct DeviceState {
    reach: ReachAcc,
    arrivals: Vec<(Timestamp, u16)>,
    positions: Vec<GeoPoint>,
}

/// Mergeable accumulator over uplink records.
///
/// `push` and `merge` commute, so a log can be split into any partitions,
/// folded independently and combined; [`MetricsFold::finish`] returns the
/// same report as [`report`] on the whole log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsFold {
    records: u64,
    devices: BTreeMap<String, DeviceState>,
    gateway_messages: BTreeMap<String, u64>,
    gateway_positions: BTreeMap<String, Vec<GeoPoint>>,
}

impl MetricsFold {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &UplinkRecord) {
        self.records += 1;
        let state = self.devices.entry(record.device_id.clone()).or_default();
        state.reach.push(record.receptions.len());
        state.arrivals.push((record.rx_time, record.fcnt));
        if let Some(p) = record.device_position {
            state.positions.push(p);
        }
        for g in &record.receptions {
            *self
                .gateway_messages
                .entry(g.gateway_id.clone())
                .or_default() += 1;
            if let Some(p) = g.gateway_position {
                self.gateway_positions
                    .entry(g.gateway_id.clone())
                    .or_default()
                    .push(p);
            }
        }
    }

    pub fn merge(mut self, other: MetricsFold) -> MetricsFold {
        self.records += other.records;
        for (dev, state) in other.devices {
            let mine = self.devices.entry(dev).or_default();
            mine.reach.merge(&state.reach);
            mine.arrivals.extend(state.arrivals);
            mine.positions.extend(state.positions);
        }
        for (gw, n) in other.gateway_messages {
            *self.gateway_messages.entry(gw).or_default() += n;
        }
        for (gw, p) in other.gateway_positions {
            self.gateway_positions.entry(gw).or_default().extend(p);
        }
        self
    }

    pub fn finish(mut self, config: &ReportConfig) -> Result<MetricsReport, MetricsError> {
        config.interarrival.validate()?;
        let reach_accs: BTreeMap<String, ReachAcc> = self
            .devices
            .iter()
            .map(|(d, s)| (d.clone(), s.reach))
            .collect();

        let mut device_points = Vec::new();
        let mut histogram = BTreeMap::new();
        let mut diagnostics = Vec::new();
        let mut losses = BTreeMap::new();
        for (dev, state) in self.devices.iter_mut() {
            let unpositioned = state.reach.messages as usize - state.positions.len();
            device_points.extend(state.positions.iter().copied());
            if let Some(p) = config.device_positions.position(dev) {
                device_points.extend(std::iter::repeat_n(p, unpositioned));
            }
            let mut times: Vec<Timestamp> = state.arrivals.iter().map(|a| a.0).collect();
            let (target_ms, guard_ms) = config.interarrival.binning_ms(dev);
            add_gaps(&mut histogram, &mut times, target_ms, guard_ms);
            losses.insert(
                dev.clone(),
                device_loss(dev, &mut state.arrivals, &mut diagnostics),
            );
        }

        Ok(MetricsReport {
            records: self.records,
            reach: GatewayReachStats::from_accs(&reach_accs),
            share: build_share(
                self.records,
                &self.gateway_messages,
                &self.gateway_positions,
                &device_points,
                &config.registry,
            ),
            interarrival: InterArrivalCdf::from_histogram(
                config.interarrival.target_interval_s,
                &histogram,
            ),
            loss: LossReport::from_devices(losses, diagnostics),
        })
    }
}

/// [`report`] evaluated as a fold over `partitions` chunks in parallel.
pub fn report_parallel(
    records: &[UplinkRecord],
    config: &ReportConfig,
    partitions: usize,
) -> Result<MetricsReport, MetricsError> {
    let chunk = records.len().div_ceil(partitions.max(1)).max(1);
    records
        .par_chunks(chunk)
        .map(|part| {
            let mut fold = MetricsFold::new();
            part.iter().for_each(|r| fold.push(r));
            fold
        })
        .reduce(MetricsFold::new, MetricsFold::merge)
        .finish(config)
}
