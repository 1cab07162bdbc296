//! Sense → Plan → Act.
//!
//! [`plan`] turns readings and setpoints into hardware-agnostic
//! [`EffectCommand`]s, [`translate`] turns those into an
//! [`ActuatorBank`](crate::simchamber::ActuatorBank), and [`Controller`]
//! strings the stages together one control period at a time, both for
//! headless [`run_recipe`] and for the [`live`] loop behind the HTTP API.

mod config;
mod effects;
pub mod live;
mod pid;
mod planner;
mod run;
mod translate;

pub use config::{merge_patch, ConfigError, ControllerConfig, ControllerKind, DosingCalibration, PostRecipePolicy};
pub use effects::{Domain, Effect, EffectCommand, EffectError};
pub use pid::{pid_update, PidGains, PidState};
pub use planner::{plan, LoopState, Phase, PhaseError, RunState};
pub use run::{
    run_recipe, run_recipe_with, tick_points, Chamber, ControlError, Controller, ManualOrder, RunLog, StopReason, TickActuation,
    TickReport,
};
pub use translate::{translate, BadCalibration, DoseCarry};
