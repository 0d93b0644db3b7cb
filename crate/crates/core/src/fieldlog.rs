//! Uplink log model shared by the simulator (writer) and the analyzer
//! (reader).
//!
//! Logs are JSON Lines, one deduplicated uplink per line:
//!
//! ```json
//! {"schema_version":1,"device_id":"tracker-01","fcnt":42,"rx_time":"2019-07-26T18:00:30.206Z",
//!  "sf":9,"app_payload_bytes":11,"device_lat":53.5558,"device_lon":9.9714,
//!  "receptions":[{"gateway_id":"gw-dom","rssi_dbm":-97.5,"rx_time":"2019-07-26T18:00:30.206Z",
//!                 "lat":53.5571,"lon":9.9702}]}
//! ```
//!
//! `snr_db`, the position fields and `device_alt`/`alt` are optional. A
//! reception without `rx_time` inherits the record's. The record `rx_time`
//! must equal the earliest reception time. Unknown fields are ignored so that
//! exports from other tools can be adapted with a thin mapping.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geo::{haversine_m, GeoPoint};
use crate::phy::SpreadingFactor;

pub const SCHEMA_VERSION: u32 = 1;

/// Receptions of the same `(device_id, fcnt)` closer than this are one uplink.
pub const DEDUP_WINDOW_MS: i64 = 2_000;

pub const CSV_HEADER: [&str; 8] = [
    "device_id",
    "fcnt",
    "rx_time",
    "sf",
    "gateway_id",
    "rssi_dbm",
    "snr_db",
    "distance_m",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("registry line {line}: {reason}")]
    Registry { line: usize, reason: String },
}

/// UTC instant with millisecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.0).expect("timestamp within chrono range")
    }

    /// Rounds to the nearest millisecond.
    pub fn offset_secs(self, seconds: f64) -> Self {
        Timestamp(self.0 + (seconds * 1000.0).round() as i64)
    }

    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }

    pub fn parse(s: &str) -> Result<Self, chrono::ParseError> {
        DateTime::parse_from_rfc3339(s).map(|dt| Timestamp(dt.timestamp_millis()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(
            &self
                .to_datetime()
                .to_rfc3339_opts(SecondsFormat::Millis, true),
        )
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(|e| serde::de::Error::custom(format!("rx_time {s:?}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayReception {
    pub gateway_id: String,
    pub rssi_dbm: f64,
    pub snr_db: Option<f64>,
    pub rx_time: Timestamp,
    pub gateway_position: Option<GeoPoint>,
}

/// One deduplicated uplink with every gateway that heard it.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkRecord {
    pub device_id: String,
    pub fcnt: u16,
    pub app_payload_bytes: usize,
    pub sf: SpreadingFactor,
    /// Earliest reception time.
    pub rx_time: Timestamp,
    pub receptions: Vec<GatewayReception>,
    pub device_position: Option<GeoPoint>,
}

impl UplinkRecord {
    /// Checks the record invariants: at least one reception, unique gateway
    /// ids, RSSI within [-200, 0] dBm and `rx_time` equal to the earliest
    /// reception.
    pub fn validate(&self) -> Result<(), String> {
        if self.device_id.is_empty() {
            return Err("device_id is empty".into());
        }
        let earliest = self
            .receptions
            .iter()
            .map(|r| r.rx_time)
            .min()
            .ok_or_else(|| "receptions must not be empty".to_string())?;
        let mut seen = std::collections::HashSet::new();
        for r in &self.receptions {
            if r.gateway_id.is_empty() {
                return Err("reception with empty gateway_id".into());
            }
            if !seen.insert(r.gateway_id.as_str()) {
                return Err(format!("gateway {} listed twice", r.gateway_id));
            }
            if !(-200.0..=0.0).contains(&r.rssi_dbm) {
                return Err(format!(
                    "rssi_dbm {} of gateway {} outside [-200, 0]",
                    r.rssi_dbm, r.gateway_id
                ));
            }
            if let Some(p) = &r.gateway_position {
                p.validate()
                    .map_err(|e| format!("gateway {}: {e}", r.gateway_id))?;
            }
        }
        if let Some(p) = &self.device_position {
            p.validate().map_err(|e| format!("device position: {e}"))?;
        }
        if earliest != self.rx_time {
            return Err(format!(
                "rx_time {} differs from earliest reception {}",
                self.rx_time, earliest
            ));
        }
        Ok(())
    }

    pub fn has_gateway(&self, gateway_id: &str) -> bool {
        self.receptions.iter().any(|r| r.gateway_id == gateway_id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReceptionLine {
    gateway_id: String,
    rssi_dbm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rx_time: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alt: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    device_id: String,
    fcnt: u16,
    rx_time: Timestamp,
    sf: u8,
    app_payload_bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device_lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device_lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device_alt: Option<f64>,
    receptions: Vec<ReceptionLine>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn position(
    lat: Option<f64>,
    lon: Option<f64>,
    alt: Option<f64>,
    what: &str,
) -> Result<Option<GeoPoint>, String> {
    match (lat, lon) {
        (Some(lat_deg), Some(lon_deg)) => {
            let p = GeoPoint {
                lat_deg,
                lon_deg,
                alt_m: alt.unwrap_or(0.0),
            };
            p.validate().map_err(|e| format!("{what}: {e}"))?;
            Ok(Some(p))
        }
        (None, None) => Ok(None),
        _ => Err(format!(
            "{what}: latitude and longitude must be given together"
        )),
    }
}

fn nonzero(v: f64) -> Option<f64> {
    (v != 0.0).then_some(v)
}

impl TryFrom<RecordLine> for UplinkRecord {
    type Error = String;

    fn try_from(line: RecordLine) -> Result<Self, String> {
        if line.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {}",
                line.schema_version
            ));
        }
        let sf = SpreadingFactor::new(line.sf).map_err(|e| e.to_string())?;
        let device_position = position(
            line.device_lat,
            line.device_lon,
            line.device_alt,
            "device position",
        )?;
        let receptions = line
            .receptions
            .into_iter()
            .map(|r| {
                let gateway_position =
                    position(r.lat, r.lon, r.alt, &format!("gateway {}", r.gateway_id))?;
                Ok(GatewayReception {
                    rx_time: r.rx_time.unwrap_or(line.rx_time),
                    gateway_id: r.gateway_id,
                    rssi_dbm: r.rssi_dbm,
                    snr_db: r.snr_db,
                    gateway_position,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let record = UplinkRecord {
            device_id: line.device_id,
            fcnt: line.fcnt,
            app_payload_bytes: line.app_payload_bytes,
            sf,
            rx_time: line.rx_time,
            receptions,
            device_position,
        };
        record.validate()?;
        Ok(record)
    }
}

impl From<&UplinkRecord> for RecordLine {
    fn from(r: &UplinkRecord) -> Self {
        RecordLine {
            schema_version: SCHEMA_VERSION,
            device_id: r.device_id.clone(),
            fcnt: r.fcnt,
            rx_time: r.rx_time,
            sf: r.sf.value(),
            app_payload_bytes: r.app_payload_bytes,
            device_lat: r.device_position.map(|p| p.lat_deg),
            device_lon: r.device_position.map(|p| p.lon_deg),
            device_alt: r.device_position.and_then(|p| nonzero(p.alt_m)),
            receptions: r
                .receptions
                .iter()
                .map(|g| ReceptionLine {
                    gateway_id: g.gateway_id.clone(),
                    rssi_dbm: g.rssi_dbm,
                    snr_db: g.snr_db,
                    rx_time: Some(g.rx_time),
                    lat: g.gateway_position.map(|p| p.lat_deg),
                    lon: g.gateway_position.map(|p| p.lon_deg),
                    alt: g.gateway_position.and_then(|p| nonzero(p.alt_m)),
                })
                .collect(),
        }
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<UplinkRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses one log line. Blank lines yield `Ok(None)`.
pub fn parse_line(line: &str) -> Result<Option<UplinkRecord>, String> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    let raw: RecordLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    UplinkRecord::try_from(raw).map(Some)
}

/// Reads a JSON-Lines log. Invalid lines become diagnostics; only a failing
/// reader aborts.
pub fn parse_log<R: BufRead>(mut reader: R) -> Result<ParsedLog, LogError> {
    let mut parsed = ParsedLog::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let outcome = match std::str::from_utf8(&buf) {
            Ok(text) => parse_line(text),
            Err(e) => Err(format!("invalid UTF-8: {e}")),
        };
        match outcome {
            Ok(Some(record)) => parsed.records.push(record),
            Ok(None) => {}
            Err(reason) => parsed.diagnostics.push(Diagnostic {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(parsed)
}

pub fn write_log<W: Write>(records: &[UplinkRecord], mut sink: W) -> Result<(), LogError> {
    for record in records {
        serde_json::to_writer(&mut sink, &RecordLine::from(record))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// One row per (record, reception). `distance_m` is filled when both the
/// device and the gateway position are known.
pub fn write_csv<W: Write>(records: &[UplinkRecord], sink: W) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        for g in &r.receptions {
            let distance = match (&r.device_position, &g.gateway_position) {
                (Some(d), Some(p)) => haversine_m(d, p).to_string(),
                _ => String::new(),
            };
            w.write_record([
                r.device_id.as_str(),
                &r.fcnt.to_string(),
                &r.rx_time.to_string(),
                &r.sf.value().to_string(),
                &g.gateway_id,
                &g.rssi_dbm.to_string(),
                &g.snr_db.map(|v| v.to_string()).unwrap_or_default(),
                &distance,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Deterministic preference between two receptions by the same gateway:
/// stronger RSSI, then earlier, then higher SNR.
fn better_reception(a: &GatewayReception, b: &GatewayReception) -> bool {
    a.rssi_dbm
        .total_cmp(&b.rssi_dbm)
        .then_with(|| b.rx_time.cmp(&a.rx_time))
        .then_with(|| {
            a.snr_db
                .unwrap_or(f64::NEG_INFINITY)
                .total_cmp(&b.snr_db.unwrap_or(f64::NEG_INFINITY))
        })
        .is_gt()
}

fn position_key(p: &Option<GeoPoint>) -> (u64, u64, u64) {
    p.map(|p| (p.lat_deg.to_bits(), p.lon_deg.to_bits(), p.alt_m.to_bits()))
        .unwrap_or((u64::MAX, u64::MAX, u64::MAX))
}

/// Merges per-gateway copies of the same uplink, the way a network server
/// deduplicates forwarded frames.
///
/// Records sharing `(device_id, fcnt)` whose `rx_time` lies within
/// [`DEDUP_WINDOW_MS`] of the earliest copy become one record. Receptions are
/// unioned by gateway id, keeping the strongest copy on conflict (stamped with
/// that gateway's earliest reception time), and sorted by gateway id. Each merged record takes the slot of its earliest input
/// position; records that merge with nothing are returned untouched.
pub fn merge_duplicates(records: Vec<UplinkRecord>) -> Vec<UplinkRecord> {
    let mut groups: HashMap<(&str, u16), Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        groups
            .entry((r.device_id.as_str(), r.fcnt))
            .or_default()
            .push(i);
    }

    // cluster id per input index; clusters are keyed by their first index
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for members in groups.into_values() {
        let mut members = members;
        members.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            ra.rx_time
                .cmp(&rb.rx_time)
                .then(ra.sf.cmp(&rb.sf))
                .then(ra.app_payload_bytes.cmp(&rb.app_payload_bytes))
                .then(position_key(&ra.device_position).cmp(&position_key(&rb.device_position)))
                .then(a.cmp(&b))
        });
        let mut start = 0;
        while start < members.len() {
            let window_open = records[members[start]].rx_time.millis();
            let mut end = start + 1;
            while end < members.len()
                && records[members[end]].rx_time.millis() - window_open <= DEDUP_WINDOW_MS
            {
                end += 1;
            }
            let cluster = members[start..end].to_vec();
            let slot = *cluster.iter().min().expect("non-empty cluster");
            clusters.insert(slot, cluster);
            start = end;
        }
    }

    let mut slots: Vec<Option<UplinkRecord>> = records.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(clusters.len());
    for (_, cluster) in clusters {
        if cluster.len() == 1 {
            out.push(slots[cluster[0]].take().expect("each index used once"));
            continue;
        }
        let mut parts = cluster
            .iter()
            .map(|&i| slots[i].take().expect("each index used once"));
        // the first member is the earliest (and canonical) copy
        let mut merged = parts.next().expect("non-empty cluster");
        let mut by_gateway: BTreeMap<String, (GatewayReception, Timestamp)> = BTreeMap::new();
        for g in merged
            .receptions
            .drain(..)
            .chain(parts.flat_map(|p| p.receptions))
        {
            match by_gateway.get_mut(&g.gateway_id) {
                Some((existing, earliest)) => {
                    *earliest = (*earliest).min(g.rx_time);
                    if better_reception(&g, existing) {
                        *existing = g;
                    }
                }
                None => {
                    let t = g.rx_time;
                    by_gateway.insert(g.gateway_id.clone(), (g, t));
                }
            }
        }
        // a gateway's reception time is its first copy, so the record never
        // starts later than the cluster did
        merged.receptions = by_gateway
            .into_values()
            .map(|(g, earliest)| GatewayReception {
                rx_time: earliest,
                ..g
            })
            .collect();
        merged.rx_time = merged
            .receptions
            .iter()
            .map(|g| g.rx_time)
            .min()
            .expect("merged record keeps its receptions");
        out.push(merged);
    }
    out
}

/// Gateway positions by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GatewayRegistry {
    positions: BTreeMap<String, GeoPoint>,
}

#[derive(Debug, Deserialize)]
struct RegistryRow {
    gateway_id: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    alt: Option<f64>,
}

impl GatewayRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous position if the id was already present.
    pub fn insert(
        &mut self,
        gateway_id: impl Into<String>,
        position: GeoPoint,
    ) -> Option<GeoPoint> {
        self.positions.insert(gateway_id.into(), position)
    }

    pub fn get(&self, gateway_id: &str) -> Option<&GeoPoint> {
        self.positions.get(gateway_id)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &GeoPoint)> {
        self.positions.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Reads a `gateway_id,lat,lon[,alt]` CSV. Duplicate ids are an error.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, LogError> {
        let mut registry = GatewayRegistry::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, row) in rdr.deserialize::<RegistryRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| LogError::Registry {
                line,
                reason: e.to_string(),
            })?;
            let position = GeoPoint {
                lat_deg: row.lat,
                lon_deg: row.lon,
                alt_m: row.alt.unwrap_or(0.0),
            };
            position.validate().map_err(|e| LogError::Registry {
                line,
                reason: e.to_string(),
            })?;
            if registry.insert(row.gateway_id.clone(), position).is_some() {
                return Err(LogError::Registry {
                    line,
                    reason: format!("duplicate gateway_id {}", row.gateway_id),
                });
            }
        }
        Ok(registry)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), LogError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["gateway_id", "lat", "lon", "alt"])?;
        for (id, p) in &self.positions {
            w.write_record([
                id.as_str(),
                &p.lat_deg.to_string(),
                &p.lon_deg.to_string(),
                &p.alt_m.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
