//! Positions, distances and the link budget used to decide whether a
//! gateway hears a transmission.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::phy::SpreadingFactor;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside (-180, 180]")]
    InvalidLongitude(f64),
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("channel model: {0}")]
    InvalidChannel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub alt_m: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        let p = GeoPoint {
            lat_deg,
            lon_deg,
            alt_m: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(GeoError::InvalidLatitude(self.lat_deg));
        }
        if !(self.lon_deg > -180.0 && self.lon_deg <= 180.0) {
            return Err(GeoError::InvalidLongitude(self.lon_deg));
        }
        Ok(())
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    // atan2 keeps precision near the antipode where asin(sqrt(h)) saturates
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).max(0.0).sqrt())
}

/// Receiver sensitivity per spreading factor, in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityTable {
    pub sf7: f64,
    pub sf8: f64,
    pub sf9: f64,
    pub sf10: f64,
    pub sf11: f64,
    pub sf12: f64,
}

impl SensitivityTable {
    pub fn get(&self, sf: SpreadingFactor) -> f64 {
        self.as_array()[usize::from(sf.value() - 7)]
    }

    fn as_array(&self) -> [f64; 6] {
        [
            self.sf7, self.sf8, self.sf9, self.sf10, self.sf11, self.sf12,
        ]
    }
}

impl Default for SensitivityTable {
    /// SX1276 datasheet figures at 125 kHz.
    fn default() -> Self {
        SensitivityTable {
            sf7: -123.0,
            sf8: -126.0,
            sf9: -129.0,
            sf10: -132.0,
            sf11: -134.5,
            sf12: -137.0,
        }
    }
}

/// Log-distance path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub ref_distance_m: f64,
    pub ref_loss_db: f64,
    pub exponent: f64,
    pub shadowing_sigma_db: f64,
    pub tx_power_dbm: f64,
    pub antenna_gains_db: f64,
    pub sensitivity_dbm: SensitivityTable,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            ref_distance_m: 1000.0,
            ref_loss_db: 128.95,
            exponent: 2.32,
            shadowing_sigma_db: 6.0,
            tx_power_dbm: 14.0,
            antenna_gains_db: 0.0,
            sensitivity_dbm: SensitivityTable::default(),
        }
    }
}

/// Outcome of one transmission at one gateway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub rssi_dbm: f64,
    /// `rssi_dbm` minus the sensitivity for the transmission's SF.
    pub margin_db: f64,
    pub received: bool,
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), GeoError> {
        let bad = |msg: &str| Err(GeoError::InvalidChannel(msg.to_string()));
        if !(self.exponent > 0.0) {
            return bad("exponent must be > 0");
        }
        if !(self.ref_distance_m > 0.0) {
            return bad("ref_distance_m must be > 0");
        }
        if !(self.shadowing_sigma_db >= 0.0) || !self.shadowing_sigma_db.is_finite() {
            return bad("shadowing_sigma_db must be >= 0");
        }
        let table = self.sensitivity_dbm.as_array();
        if table.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("sensitivity_dbm must be strictly decreasing from sf7 to sf12");
        }
        Ok(())
    }

    /// Loss in dB; distances inside the reference distance (including zero)
    /// clamp to `ref_loss_db`.
    fn loss_clamped(&self, distance_m: f64) -> f64 {
        if distance_m <= self.ref_distance_m {
            self.ref_loss_db
        } else {
            self.ref_loss_db + 10.0 * self.exponent * (distance_m / self.ref_distance_m).log10()
        }
    }

    /// RSSI before shadowing.
    pub fn mean_rssi_dbm(&self, distance_m: f64, extra_gain_db: f64) -> f64 {
        self.tx_power_dbm + self.antenna_gains_db + extra_gain_db - self.loss_clamped(distance_m)
    }

    /// Link decision with per-node gain offsets on top of the model's gains.
    /// `distance_m` may be zero for co-located nodes.
    pub fn receive(
        &self,
        sf: SpreadingFactor,
        distance_m: f64,
        extra_gain_db: f64,
        shadow_draw_db: f64,
    ) -> Result<LinkSample, GeoError> {
        if !(distance_m >= 0.0) {
            return Err(GeoError::NonPositiveDistance(distance_m));
        }
        let rssi_dbm = self.mean_rssi_dbm(distance_m, extra_gain_db) - shadow_draw_db;
        let margin_db = rssi_dbm - self.sensitivity_dbm.get(sf);
        Ok(LinkSample {
            rssi_dbm,
            margin_db,
            received: margin_db >= 0.0,
        })
    }

    /// Probability that a transmission is received, integrating the
    /// shadowing distribution.
    pub fn reception_probability(
        &self,
        sf: SpreadingFactor,
        distance_m: f64,
        extra_gain_db: f64,
    ) -> f64 {
        let margin = self.mean_rssi_dbm(distance_m, extra_gain_db) - self.sensitivity_dbm.get(sf);
        if self.shadowing_sigma_db == 0.0 {
            return if margin >= 0.0 { 1.0 } else { 0.0 };
        }
        // received ⇔ draw ≤ margin
        Normal::new(0.0, self.shadowing_sigma_db)
            .expect("sigma validated positive")
            .cdf(margin)
    }
}

/// `ref_loss_db + 10·exponent·log10(d / ref_distance_m)`, clamped to
/// `ref_loss_db` inside the reference distance.
pub fn path_loss_db(model: &ChannelModel, distance_m: f64) -> Result<f64, GeoError> {
    if !(distance_m > 0.0) {
        return Err(GeoError::NonPositiveDistance(distance_m));
    }
    Ok(model.loss_clamped(distance_m))
}

/// Reception decision with no per-node gain offsets.
pub fn receive_decision(
    model: &ChannelModel,
    sf: u8,
    distance_m: f64,
    shadow_draw_db: f64,
) -> Result<LinkSample, GeoError> {
    let sf = SpreadingFactor::new(sf).map_err(|e| GeoError::InvalidChannel(e.to_string()))?;
    model.receive(sf, distance_m, 0.0, shadow_draw_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_reference_arcs() {
        let p = pt(53.55, 9.97);
        assert_eq!(haversine_m(&p, &p), 0.0);
        let one_degree = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;
        assert!((haversine_m(&pt(0.0, 0.0), &pt(0.0, 1.0)) - one_degree).abs() < 1.0);
        assert!((haversine_m(&pt(0.0, 0.0), &pt(0.0, 1.0)) - 111_195.0).abs() < 1.0);
        let half = std::f64::consts::PI * EARTH_RADIUS_M;
        assert!((haversine_m(&pt(0.0, 0.0), &pt(0.0, 180.0)) - half).abs() < 10.0);
        assert!((haversine_m(&pt(0.0, 0.0), &pt(0.0, 180.0)) - 20_015_087.0).abs() < 10.0);
    }

    #[test]
    fn coordinate_validation() {
        assert_eq!(
            GeoPoint::new(91.0, 0.0),
            Err(GeoError::InvalidLatitude(91.0))
        );
        assert_eq!(
            GeoPoint::new(0.0, -180.0),
            Err(GeoError::InvalidLongitude(-180.0))
        );
        assert!(GeoPoint::new(0.0, 180.0).is_ok());
    }

    #[test]
    fn path_loss_reference_points() {
        let m = ChannelModel::default();
        assert_eq!(path_loss_db(&m, 1000.0).unwrap(), 128.95);
        assert_eq!(path_loss_db(&m, 10.0).unwrap(), 128.95);
        let cubic = ChannelModel { exponent: 3.0, ..m };
        assert!((path_loss_db(&cubic, 2000.0).unwrap() - 128.95 - 9.03).abs() < 0.01);
        assert!((path_loss_db(&m, 10_000.0).unwrap() - 128.95 - 23.2).abs() < 1e-9);
        assert!(path_loss_db(&m, 0.0).is_err());
        assert!(path_loss_db(&m, -5.0).is_err());
    }

    /// A model whose mean RSSI at 1 km is exactly `rssi` dBm.
    fn model_with_rssi_at_ref(rssi: f64) -> ChannelModel {
        ChannelModel {
            tx_power_dbm: 0.0,
            ref_loss_db: -rssi,
            ..ChannelModel::default()
        }
    }

    #[test]
    fn threshold_decisions() {
        let m = model_with_rssi_at_ref(-120.0);
        let s = receive_decision(&m, 9, 1000.0, 0.0).unwrap();
        assert!(s.received);
        assert!((s.margin_db - 9.0).abs() < 1e-9);

        let m = model_with_rssi_at_ref(-140.0);
        let s = receive_decision(&m, 9, 1000.0, 0.0).unwrap();
        assert!(!s.received);
        assert!((s.margin_db + 11.0).abs() < 1e-9);

        assert!(receive_decision(&m, 13, 1000.0, 0.0).is_err());
        assert!(receive_decision(&m, 9, -1.0, 0.0).is_err());
    }

    #[test]
    fn zero_margin_is_a_coin_flip_under_shadowing() {
        let m = ChannelModel {
            shadowing_sigma_db: 6.0,
            ..model_with_rssi_at_ref(-129.0)
        };
        let normal = NormalDist::new(0.0, m.shadowing_sigma_db).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                receive_decision(&m, 9, 1000.0, normal.sample(&mut rng))
                    .unwrap()
                    .received
            })
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
        let sf9 = SpreadingFactor::new(9).unwrap();
        assert!((m.reception_probability(sf9, 1000.0, 0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn channel_validation() {
        assert!(ChannelModel::default().validate().is_ok());
        let mut m = ChannelModel::default();
        m.sensitivity_dbm.sf10 = -120.0;
        assert!(m.validate().is_err());
        assert!(ChannelModel {
            exponent: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ChannelModel {
            shadowing_sigma_db: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -179.999f64..=180.0).prop_map(|(lat, lon)| pt(lat, lon))
    }

    proptest! {
        #[test]
        fn haversine_symmetric_and_triangle(a in arb_point(), b in arb_point(), c in arb_point()) {
            let ab = haversine_m(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_m(&b, &a)).abs() <= 1e-6 * ab.max(1.0));
            let ac = haversine_m(&a, &c);
            let cb = haversine_m(&c, &b);
            prop_assert!(ab <= (ac + cb) * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn path_loss_monotone(d in 1.0f64..50_000.0, extra in 0.0f64..50_000.0, gamma in 0.5f64..5.0) {
            let m = ChannelModel { exponent: gamma, ..Default::default() };
            prop_assert!(path_loss_db(&m, d + extra).unwrap() >= path_loss_db(&m, d).unwrap());
        }

        #[test]
        fn reception_probability_non_increasing_in_distance(d in 1.0f64..30_000.0, extra in 0.0f64..30_000.0, s in 7u8..=12) {
            let m = ChannelModel::default();
            let sf = SpreadingFactor::new(s).unwrap();
            prop_assert!(m.reception_probability(sf, d + extra, 0.0) <= m.reception_probability(sf, d, 0.0));
        }

        #[test]
        fn higher_sf_hears_whatever_lower_sf_hears(d in 1.0f64..30_000.0, s in 7u8..12) {
            let m = ChannelModel { shadowing_sigma_db: 0.0, ..Default::default() };
            if receive_decision(&m, s, d, 0.0).unwrap().received {
                for higher in s + 1..=12 {
                    prop_assert!(receive_decision(&m, higher, d, 0.0).unwrap().received);
                }
            }
        }
    }
}
