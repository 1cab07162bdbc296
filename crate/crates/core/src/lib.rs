//! Simulated plant growth chamber: recipe interpreter, chamber model,
//! control loop, local store and replication.
//!
//! Generic types take the scalar as a parameter (`f32` or `f64`); the
//! aliases below fix it to `f64`, with `F32`-suffixed variants for
//! single precision.

pub mod control;
pub mod datastore;
pub mod recipe;
mod scalar;
pub mod settings;
pub mod simchamber;
pub mod syncproto;
mod variable;

pub use scalar::Scalar;
pub use variable::{registry, UnknownVariable, Variable, VariableDescriptor, VARIABLE_COUNT};

pub type EnvironmentState = simchamber::EnvironmentState<f64>;
pub type ActuatorBank = simchamber::ActuatorBank<f64>;
pub type ChamberParams = simchamber::ChamberParams<f64>;
pub type Scenario = simchamber::Scenario<f64>;
pub type PidGains = control::PidGains<f64>;
pub type PidState = control::PidState<f64>;

pub type EnvironmentStateF32 = simchamber::EnvironmentState<f32>;
pub type ActuatorBankF32 = simchamber::ActuatorBank<f32>;
pub type ChamberParamsF32 = simchamber::ChamberParams<f32>;
pub type ScenarioF32 = simchamber::Scenario<f32>;
pub type PidGainsF32 = control::PidGains<f32>;
pub type PidStateF32 = control::PidState<f32>;
