//! Grid-aware EV charging dispatch on radial low-voltage networks.
//!
//! The crate models a three-phase (or single-phase) radial feeder, solves
//! its load flow, prices imports under a day-ahead tariff or a stacked
//! band tariff, and schedules EV sessions with a receding-horizon linear
//! program. `evaluate` replays a schedule through the full load flow and
//! reports grid violations and stakeholder metrics.

pub mod dispatch;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod fleet;
pub mod grid;
pub mod powerflow;
pub mod scenario;
pub mod tariff;
pub mod units;

pub use error::{Error, Result};
