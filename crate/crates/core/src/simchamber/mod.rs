//! Discrete-time simulation of a single well-mixed growth chamber.
//!
//! [`step`] advances the ground-truth [`EnvironmentState`] under an
//! [`ActuatorBank`] with forward Euler; [`read_sensors`] turns ground truth
//! into quantized, noisy, possibly not-yet-valid readings.

mod dynamics;
mod presets;
mod sensors;
mod state;

pub use dynamics::{step, ChamberParams, ParamsError, SimError};
pub use presets::{scenario_preset, PresetError, Scenario, PRESET_NAMES, PRESET_VERSION};
pub use sensors::{read_sensors, Reading, Readings, SensorChannel, SensorModel};
pub use state::{ActuatorBank, DosingPump, EnvironmentState, Pump};
