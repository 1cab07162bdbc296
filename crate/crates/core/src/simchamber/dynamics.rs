use crate::scalar::Scalar;
use crate::variable::{Variable, VARIABLE_COUNT};

use super::state::{ActuatorBank, EnvironmentState, Pump};

/// Physical parameters of the chamber model.
///
/// All rates are per second. Dosing responses are expressed per ml per liter
/// of reservoir so that the effect of a dose scales with `1 / reservoir_liters`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamberParams<T> {
    /// Heat capacity of the air volume and fixtures, J/°C.
    pub thermal_mass: T,
    pub heater_watts: T,
    pub chiller_watts: T,
    /// Passive first-order coupling toward ambient, per variable, 1/s.
    pub coupling: [T; VARIABLE_COUNT],
    pub ambient: EnvironmentState<T>,
    /// Exchange rate with ambient while the fresh-air valve is open, 1/s.
    /// Shared by temperature, humidity and CO₂.
    pub vent_rate: T,
    /// Humidity source at full humidifier output, %RH/s.
    pub humidifier_rate: T,
    /// CO₂ uptake at full (mean) light, ppm/s.
    pub co2_drawdown: T,
    /// pH change per ml of pH up (or down) per liter of reservoir.
    pub ph_per_ml_per_liter: T,
    /// EC rise per ml of nutrient per liter of reservoir, µS/cm.
    pub ec_per_ml_per_liter: T,
    pub reservoir_liters: T,
    /// Water level rise per ml of fresh water, mm.
    pub level_mm_per_ml: T,
    pub evaporation_mm_s: T,
    /// Illuminance of each light channel at full output, lux.
    pub lux_red: T,
    pub lux_blue: T,
    pub lux_white: T,
    /// Forward Euler step, seconds.
    pub integration_step: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("thermal mass must be positive")]
    ThermalMass,
    #[error("{0} must be non-negative")]
    NegativeRate(&'static str),
    #[error("reservoir volume must be positive")]
    Reservoir,
    #[error("integration step must be at least 1 s")]
    IntegrationStep,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("step of {dt} s is not a positive multiple of the {integration_step} s integration step")]
    StepMismatch { dt: u64, integration_step: u64 },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

impl<T: Scalar> ChamberParams<T> {
    pub fn coupling_of(&self, v: Variable) -> T {
        self.coupling[v.index()]
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(self.thermal_mass > T::zero()) {
            return Err(ParamsError::ThermalMass);
        }
        if !(self.reservoir_liters > T::zero()) {
            return Err(ParamsError::Reservoir);
        }
        if self.integration_step < 1 {
            return Err(ParamsError::IntegrationStep);
        }
        let rates = [
            ("heater_watts", self.heater_watts),
            ("chiller_watts", self.chiller_watts),
            ("vent_rate", self.vent_rate),
            ("humidifier_rate", self.humidifier_rate),
            ("co2_drawdown", self.co2_drawdown),
            ("ph_per_ml_per_liter", self.ph_per_ml_per_liter),
            ("ec_per_ml_per_liter", self.ec_per_ml_per_liter),
            ("level_mm_per_ml", self.level_mm_per_ml),
            ("evaporation_mm_s", self.evaporation_mm_s),
            ("lux_red", self.lux_red),
            ("lux_blue", self.lux_blue),
            ("lux_white", self.lux_white),
        ];
        for (name, r) in rates {
            if !(r >= T::zero()) {
                return Err(ParamsError::NegativeRate(name));
            }
        }
        if self.coupling.iter().any(|k| !(*k >= T::zero())) {
            return Err(ParamsError::NegativeRate("coupling"));
        }
        Ok(())
    }

    /// Illuminance produced by the light channels, before clamping.
    pub fn illuminance(&self, bank: &ActuatorBank<T>) -> T {
        bank.light_red * self.lux_red + bank.light_blue * self.lux_blue + bank.light_white * self.lux_white
    }
}

/// Advances the chamber by `dt` seconds with the actuators held constant.
pub fn step<T: Scalar>(
    state: &EnvironmentState<T>,
    actuators: &ActuatorBank<T>,
    params: &ChamberParams<T>,
    dt: u64,
) -> Result<EnvironmentState<T>, SimError> {
    params.validate()?;
    let h = params.integration_step;
    if dt == 0 || dt % h != 0 {
        return Err(SimError::StepMismatch { dt, integration_step: h });
    }
    let mut next = *state;
    let h_t = T::from_u64(h).expect("step fits scalar");
    for k in 0..dt / h {
        let from = T::from_u64(k * h).expect("time fits scalar");
        euler_substep(&mut next, actuators, params, from, h_t);
    }
    next.sim_time = state.sim_time + dt;
    Ok(next)
}

fn euler_substep<T: Scalar>(
    state: &mut EnvironmentState<T>,
    bank: &ActuatorBank<T>,
    p: &ChamberParams<T>,
    from: T,
    h: T,
) {
    use Variable::*;
    let vent = if bank.vent_open { p.vent_rate } else { T::zero() };
    let toward_ambient = |v: Variable, x: T, extra: T| (p.coupling_of(v) + extra) * (p.ambient.get(v) - x);
    let dose = |pump: Pump| bank.pump(pump).volume_between(from, h);

    let air_t = state.get(AirTemperature);
    let d_air_t = (bank.heater * p.heater_watts - bank.chiller * p.chiller_watts) / p.thermal_mass
        + toward_ambient(AirTemperature, air_t, vent);

    let hum = state.get(AirHumidity);
    let d_hum = bank.humidifier * p.humidifier_rate + toward_ambient(AirHumidity, hum, vent);

    let co2 = state.get(AirCarbonDioxide);
    let d_co2 = toward_ambient(AirCarbonDioxide, co2, vent) - p.co2_drawdown * bank.light_fraction();

    let water_t = state.get(WaterTemperature);
    let d_water_t = toward_ambient(WaterTemperature, water_t, T::zero());

    let ph = state.get(WaterPotentialHydrogen);
    let ph_delta = (dose(Pump::PhUp) - dose(Pump::PhDown)) * p.ph_per_ml_per_liter / p.reservoir_liters
        + h * toward_ambient(WaterPotentialHydrogen, ph, T::zero());

    let ec = state.get(WaterElectricalConductivity);
    let ec_delta = (dose(Pump::NutrientA) + dose(Pump::NutrientB)) * p.ec_per_ml_per_liter / p.reservoir_liters
        + h * toward_ambient(WaterElectricalConductivity, ec, T::zero());

    let level = state.get(WaterLevel);
    let level_delta = dose(Pump::FreshWater) * p.level_mm_per_ml - h * p.evaporation_mm_s
        + h * toward_ambient(WaterLevel, level, T::zero());

    let values = state.values_mut();
    values[AirTemperature.index()] = air_t + h * d_air_t;
    values[AirHumidity.index()] = hum + h * d_hum;
    values[AirCarbonDioxide.index()] = co2 + h * d_co2;
    values[WaterTemperature.index()] = water_t + h * d_water_t;
    values[WaterPotentialHydrogen.index()] = ph + ph_delta;
    values[WaterElectricalConductivity.index()] = ec + ec_delta;
    values[WaterLevel.index()] = level + level_delta;
    values[LightIlluminance.index()] = p.illuminance(bank);
    state.clamp_all();
}
