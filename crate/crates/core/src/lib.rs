//! LoRaWAN deployment toolkit.
//!
//! * [`phy`]: time-on-air, duty-cycle intervals and spreading-factor planning.
//! * [`geo`]: distances, path loss and the per-gateway reception decision.
//! * [`netsim`]: deterministic multi-gateway uplink simulation.
//! * [`fieldlog`]: the JSON-Lines uplink log shared by simulator and analyzer.
//! * [`metrics`]: gateway reach, gateway share, inter-arrival CDF and loss.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fieldlog;
pub mod geo;
pub mod metrics;
pub mod netsim;
pub mod phy;

pub use fieldlog::{GatewayReception, GatewayRegistry, Timestamp, UplinkRecord};
pub use geo::{ChannelModel, GeoPoint};
pub use netsim::{run_scenario, Scenario, SimOutput};
pub use phy::{DutyCyclePolicy, PhyParams, SpreadingFactor};
