//! Planar model, cooperative controller and numerical audits for two drones
//! carrying a bar on two ropes.
//!
//! The configuration is `q = [y, z, θ1, θ2, θ3]`: the left drone position, the
//! two rope angles from vertical and the bar angle from horizontal. The
//! controller outputs the four thrust components `(f1 sinφ1, f1 cosφ1,
//! f2 sinφ2, f2 cosφ2)`; attitude is assumed to be tracked perfectly.
//!
//! ```
//! use dronebar::{scenarios, simulate};
//!
//! let config = scenarios::exp1_test1().with_duration(0.5);
//! let log = simulate::run(&config).unwrap();
//! assert!(log.fault.is_none());
//! ```

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod scenario;
pub mod scenarios;
pub mod simulate;
pub mod verify;

pub use control::{Gains, Setpoint};
pub use dynamics::{ActuationWrench, BodyPoint, GeneralizedState, PhysicalParams, Vec5};
pub use error::{Error, Result};
pub use scenario::{ControllerKind, ScenarioConfig};
