//! Named parameter bundles.
//!
//! Chamber thermal properties are not published for the reference hardware;
//! every number below is a modelling choice sized for a desktop chamber,
//! except the heater (150 W) and chiller (200 W) capacities and the sensor
//! ranges, resolutions and CO₂ warm-up, which follow the component datasheets.
//!
//! Version 1 of the bundles. Changing a value changes simulated trajectories,
//! so bump [`PRESET_VERSION`] when doing so.

use crate::scalar::Scalar;
use crate::variable::{Variable, VARIABLE_COUNT};

use super::dynamics::ChamberParams;
use super::sensors::{SensorChannel, SensorModel};
use super::state::EnvironmentState;

pub const PRESET_VERSION: u32 = 1;
pub const PRESET_NAMES: [&str; 3] = ["default_desktop", "noisy_sensors", "hot_ambient"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown preset `{0}` (expected one of default_desktop, noisy_sensors, hot_ambient)")]
pub struct PresetError(pub String);

/// Initial state, plant parameters and sensor model.
#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub state: EnvironmentState<T>,
    pub params: ChamberParams<T>,
    pub sensors: SensorModel,
}

fn ambient<T: Scalar>(air_temperature: f64) -> EnvironmentState<T> {
    EnvironmentState::from_fn(|v| {
        T::lit(match v {
            Variable::AirTemperature => air_temperature,
            Variable::AirHumidity => 45.0,
            Variable::AirCarbonDioxide => 400.0,
            Variable::WaterTemperature => 20.0,
            Variable::WaterPotentialHydrogen => 6.0,
            Variable::WaterElectricalConductivity => 1500.0,
            Variable::LightIlluminance => 0.0,
            Variable::WaterLevel => 300.0,
        })
    })
}

fn desktop_params<T: Scalar>(ambient: EnvironmentState<T>) -> ChamberParams<T> {
    let mut coupling = [T::zero(); VARIABLE_COUNT];
    coupling[Variable::AirTemperature.index()] = T::lit(1e-4);
    coupling[Variable::AirHumidity.index()] = T::lit(1e-4);
    coupling[Variable::AirCarbonDioxide.index()] = T::lit(1e-4);
    coupling[Variable::WaterTemperature.index()] = T::lit(5e-5);
    ChamberParams {
        thermal_mass: T::lit(40_000.0),
        heater_watts: T::lit(150.0),
        chiller_watts: T::lit(200.0),
        coupling,
        ambient,
        vent_rate: T::lit(3e-4),
        humidifier_rate: T::lit(0.02),
        co2_drawdown: T::lit(0.05),
        ph_per_ml_per_liter: T::lit(0.05),
        ec_per_ml_per_liter: T::lit(40.0),
        reservoir_liters: T::lit(20.0),
        level_mm_per_ml: T::lit(0.01),
        evaporation_mm_s: T::zero(),
        lux_red: T::lit(8_000.0),
        lux_blue: T::lit(4_000.0),
        lux_white: T::lit(40_000.0),
        integration_step: 1,
    }
}

fn ideal_sensors() -> SensorModel {
    let channels = Variable::ALL.map(|v| {
        let q = match v {
            Variable::AirTemperature | Variable::AirHumidity => 0.1,
            Variable::AirCarbonDioxide => 1.0,
            Variable::WaterTemperature => 0.1,
            Variable::WaterPotentialHydrogen => 0.01,
            Variable::WaterElectricalConductivity => 1.0,
            Variable::LightIlluminance => 0.1,
            Variable::WaterLevel => 1.0,
        };
        let mut ch = SensorChannel::ideal(v, q);
        if v == Variable::AirCarbonDioxide {
            ch.warm_up_s = 150;
        }
        ch
    });
    SensorModel::new(channels)
}

/// Datasheet accuracies read as ±2σ.
fn noisy_sensors() -> SensorModel {
    let mut model = ideal_sensors();
    for (v, sigma) in [
        (Variable::AirTemperature, 0.05),
        (Variable::AirHumidity, 0.05),
        (Variable::AirCarbonDioxide, 25.0),
        (Variable::WaterTemperature, 0.25),
        (Variable::WaterPotentialHydrogen, 0.02),
        (Variable::WaterElectricalConductivity, 10.0),
        (Variable::LightIlluminance, 5.0),
        (Variable::WaterLevel, 0.5),
    ] {
        model.channel_mut(v).sigma = sigma;
    }
    model
}

pub fn scenario_preset<T: Scalar>(name: &str) -> Result<Scenario<T>, PresetError> {
    match name {
        "default_desktop" => {
            let amb = ambient(22.0);
            Ok(Scenario { state: amb, params: desktop_params(amb), sensors: ideal_sensors() })
        }
        "noisy_sensors" => {
            let amb = ambient(22.0);
            Ok(Scenario { state: amb, params: desktop_params(amb), sensors: noisy_sensors() })
        }
        "hot_ambient" => {
            let amb = ambient(32.0).with(Variable::AirHumidity, T::lit(70.0));
            let mut params = desktop_params(amb);
            params.evaporation_mm_s = T::lit(1e-4);
            Ok(Scenario { state: amb, params, sensors: ideal_sensors() })
        }
        other => Err(PresetError(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desktop_values() {
        let s = scenario_preset::<f64>("default_desktop").unwrap();
        assert_eq!(s.params.ambient.get(Variable::AirTemperature), 22.0);
        assert_eq!(s.params.ambient.get(Variable::AirHumidity), 45.0);
        assert_eq!(s.params.ambient.get(Variable::AirCarbonDioxide), 400.0);
        assert_eq!(s.params.thermal_mass, 40_000.0);
        assert_eq!(s.params.integration_step, 1);
        s.params.validate().unwrap();
        s.sensors.validate().unwrap();
    }

    #[test]
    fn noisy_water_temperature_sigma() {
        let s = scenario_preset::<f64>("noisy_sensors").unwrap();
        assert_eq!(s.sensors.channel(Variable::WaterTemperature).sigma, 0.25);
    }

    #[test]
    fn unknown_preset() {
        assert_eq!(scenario_preset::<f64>("greenhouse").unwrap_err(), PresetError("greenhouse".into()));
        for name in PRESET_NAMES {
            scenario_preset::<f32>(name).unwrap().params.validate().unwrap();
        }
    }
}
