//! LoRa airtime and duty-cycle planning.
//!
//! Time-on-air follows the Semtech SX127x/SX126x packet model:
//!
//! ```text
//! T_sym      = 2^SF / BW
//! n_payload  = 8 + max(ceil((8·PL − 4·SF + 28 + 16·CRC − 20·IH) / (4·(SF − 2·DE))) · (CR + 4), 0)
//! T_packet   = (n_preamble + 4.25)·T_sym + n_payload·T_sym
//! ```
//!
//! Duty-cycle pacing is per transmission: the next packet may start no
//! earlier than `T_packet / duty_cycle` after the previous one started.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest PHY payload a LoRa frame can carry.
pub const MAX_PHY_PAYLOAD: usize = 255;

/// Uplink MAC overhead with no FOpts: MHDR(1) + DevAddr(4) + FCtrl(1) +
/// FCnt(2) + FPort(1) + MIC(4).
pub const DEFAULT_MAC_OVERHEAD: usize = 13;

pub const SUPPORTED_BANDWIDTHS_HZ: [u32; 3] = [125_000, 250_000, 500_000];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("spreading factor {0} out of range (7..=12)")]
    InvalidSpreadingFactor(u8),
    #[error("unsupported bandwidth {0} Hz (expected 125000, 250000 or 500000)")]
    UnsupportedBandwidth(u32),
    #[error("coding rate {0} out of range (1..=4, meaning 4/5..4/8)")]
    InvalidCodingRate(u8),
    #[error("preamble must be at least 1 symbol")]
    InvalidPreamble,
    #[error("PHY payload of {0} bytes exceeds the {MAX_PHY_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
    #[error("duty cycle {0} must be in (0, 1]")]
    InvalidDutyCycle(f64),
    #[error("target interval {0} s must be positive")]
    InvalidTargetInterval(f64),
}

/// LoRa spreading factor, SF7 through SF12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub const MIN: SpreadingFactor = SpreadingFactor(7);
    pub const MAX: SpreadingFactor = SpreadingFactor(12);

    pub fn new(sf: u8) -> Result<Self, PhyError> {
        if (7..=12).contains(&sf) {
            Ok(SpreadingFactor(sf))
        } else {
            Err(PhyError::InvalidSpreadingFactor(sf))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// SF7..=SF12 in ascending order.
    pub fn all() -> impl DoubleEndedIterator<Item = SpreadingFactor> {
        (7..=12).map(SpreadingFactor)
    }
}

impl TryFrom<u8> for SpreadingFactor {
    type Error = PhyError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        SpreadingFactor::new(value)
    }
}

impl From<SpreadingFactor> for u8 {
    fn from(sf: SpreadingFactor) -> u8 {
        sf.0
    }
}

impl fmt::Display for SpreadingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SF{}", self.0)
    }
}

/// Low data rate optimization (the DE bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowDataRateOptimize {
    /// On for SF11/SF12 at 125 kHz, off otherwise.
    #[default]
    Auto,
    On,
    Off,
}

/// Everything needed to compute the airtime of one LoRa packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhyParams {
    pub sf: SpreadingFactor,
    pub bandwidth_hz: u32,
    /// CR in 1..=4, i.e. a code rate of 4/(4+CR).
    pub coding_rate: u8,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    pub crc_on: bool,
    pub low_data_rate_optimize: LowDataRateOptimize,
    pub phy_payload_bytes: usize,
}

impl PhyParams {
    /// EU868 uplink defaults: 125 kHz, CR 4/5, 8-symbol preamble, explicit
    /// header, CRC on, DE auto.
    pub fn eu868(sf: SpreadingFactor, phy_payload_bytes: usize) -> Self {
        PhyParams {
            sf,
            bandwidth_hz: 125_000,
            coding_rate: 1,
            preamble_symbols: 8,
            explicit_header: true,
            crc_on: true,
            low_data_rate_optimize: LowDataRateOptimize::Auto,
            phy_payload_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if !SUPPORTED_BANDWIDTHS_HZ.contains(&self.bandwidth_hz) {
            return Err(PhyError::UnsupportedBandwidth(self.bandwidth_hz));
        }
        if !(1..=4).contains(&self.coding_rate) {
            return Err(PhyError::InvalidCodingRate(self.coding_rate));
        }
        if self.preamble_symbols == 0 {
            return Err(PhyError::InvalidPreamble);
        }
        if self.phy_payload_bytes > MAX_PHY_PAYLOAD {
            return Err(PhyError::PayloadTooLarge(self.phy_payload_bytes));
        }
        Ok(())
    }

    /// Resolved DE flag.
    pub fn low_data_rate_enabled(&self) -> bool {
        match self.low_data_rate_optimize {
            LowDataRateOptimize::On => true,
            LowDataRateOptimize::Off => false,
            LowDataRateOptimize::Auto => self.sf.value() >= 11 && self.bandwidth_hz == 125_000,
        }
    }
}

/// `2^sf / bandwidth_hz` in seconds.
pub fn symbol_duration(sf: u8, bandwidth_hz: u32) -> Result<f64, PhyError> {
    let sf = SpreadingFactor::new(sf)?;
    if bandwidth_hz == 0 {
        return Err(PhyError::UnsupportedBandwidth(bandwidth_hz));
    }
    Ok(f64::from(1u32 << sf.value()) / f64::from(bandwidth_hz))
}

/// Number of payload symbols including the 8 fixed header symbols.
pub fn payload_symbol_count(params: &PhyParams) -> Result<u32, PhyError> {
    params.validate()?;
    let sf = i64::from(params.sf.value());
    let de = i64::from(params.low_data_rate_enabled());
    let ih = i64::from(!params.explicit_header);
    let crc = i64::from(params.crc_on);
    let pl = params.phy_payload_bytes as i64;

    let numerator = 8 * pl - 4 * sf + 28 + 16 * crc - 20 * ih;
    let denominator = 4 * (sf - 2 * de);
    // ceil() of a non-positive numerator is clamped to zero below anyway.
    let blocks = if numerator > 0 {
        (numerator + denominator - 1) / denominator
    } else {
        0
    };
    Ok(8 + (blocks * (i64::from(params.coding_rate) + 4)) as u32)
}

/// Packet time-on-air in seconds.
pub fn time_on_air(params: &PhyParams) -> Result<f64, PhyError> {
    let n_payload = payload_symbol_count(params)?;
    // Count quarter symbols so the only rounding happens in the final division.
    let quarter_symbols = 4 * u64::from(params.preamble_symbols) + 17 + 4 * u64::from(n_payload);
    let chips = quarter_symbols * (1u64 << params.sf.value());
    Ok(chips as f64 / (4.0 * f64::from(params.bandwidth_hz)))
}

/// Regulatory duty-cycle limit applied as per-transmission pacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DutyCyclePolicy {
    pub duty_cycle: f64,
}

impl DutyCyclePolicy {
    pub fn new(duty_cycle: f64) -> Result<Self, PhyError> {
        let policy = DutyCyclePolicy { duty_cycle };
        policy.validate()?;
        Ok(policy)
    }

    /// 1 %, the EU868 g/g1 sub-band limit.
    pub fn eu868() -> Self {
        DutyCyclePolicy { duty_cycle: 0.01 }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if self.duty_cycle > 0.0 && self.duty_cycle <= 1.0 {
            Ok(())
        } else {
            Err(PhyError::InvalidDutyCycle(self.duty_cycle))
        }
    }
}

impl Default for DutyCyclePolicy {
    fn default() -> Self {
        DutyCyclePolicy::eu868()
    }
}

/// Smallest legal start-to-start period between two transmissions.
pub fn min_interval(params: &PhyParams, policy: &DutyCyclePolicy) -> Result<f64, PhyError> {
    policy.validate()?;
    Ok(time_on_air(params)? / policy.duty_cycle)
}

/// An application message and the interval it should be sent at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppMessageSpec {
    pub app_payload_bytes: usize,
    pub mac_overhead_bytes: usize,
    pub target_interval_s: f64,
}

impl AppMessageSpec {
    pub fn new(app_payload_bytes: usize, target_interval_s: f64) -> Self {
        AppMessageSpec {
            app_payload_bytes,
            mac_overhead_bytes: DEFAULT_MAC_OVERHEAD,
            target_interval_s,
        }
    }

    pub fn phy_payload_bytes(&self) -> usize {
        self.app_payload_bytes + self.mac_overhead_bytes
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if self.phy_payload_bytes() > MAX_PHY_PAYLOAD {
            return Err(PhyError::PayloadTooLarge(self.phy_payload_bytes()));
        }
        if !(self.target_interval_s > 0.0) || !self.target_interval_s.is_finite() {
            return Err(PhyError::InvalidTargetInterval(self.target_interval_s));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanCandidate {
    pub sf: SpreadingFactor,
    pub time_on_air_s: f64,
    pub min_interval_s: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub phy_payload_bytes: usize,
    pub target_interval_s: f64,
    /// One entry per SF, ascending.
    pub candidates: Vec<PlanCandidate>,
    /// Highest feasible SF, `None` when even SF7 cannot meet the target.
    pub chosen: Option<SpreadingFactor>,
}

impl PlanResult {
    pub fn is_feasible(&self) -> bool {
        self.chosen.is_some()
    }

    pub fn candidate(&self, sf: SpreadingFactor) -> Option<&PlanCandidate> {
        self.candidates.iter().find(|c| c.sf == sf)
    }

    /// Shortest achievable interval, i.e. the SF7 entry.
    pub fn fastest(&self) -> &PlanCandidate {
        &self.candidates[0]
    }
}

/// Picks the highest spreading factor whose duty-cycle minimum interval
/// still fits the target. Higher SF buys sensitivity at the cost of airtime,
/// so the slowest SF that meets the target gives the best coverage.
pub fn plan_spreading_factor(
    spec: &AppMessageSpec,
    policy: &DutyCyclePolicy,
) -> Result<PlanResult, PhyError> {
    spec.validate()?;
    policy.validate()?;
    let candidates = SpreadingFactor::all()
        .map(|sf| {
            let params = PhyParams::eu868(sf, spec.phy_payload_bytes());
            let time_on_air_s = time_on_air(&params)?;
            let min_interval_s = time_on_air_s / policy.duty_cycle;
            Ok(PlanCandidate {
                sf,
                time_on_air_s,
                min_interval_s,
                feasible: min_interval_s <= spec.target_interval_s,
            })
        })
        .collect::<Result<Vec<_>, PhyError>>()?;
    let chosen = candidates.iter().rev().find(|c| c.feasible).map(|c| c.sf);
    Ok(PlanResult {
        phy_payload_bytes: spec.phy_payload_bytes(),
        target_interval_s: spec.target_interval_s,
        candidates,
        chosen,
    })
}

/// Rounds seconds to the 0.01 s display precision.
pub fn round_centis(seconds: f64) -> f64 {
    (seconds * 100.0).round() / 100.0
}
