//! Effect commands to device settings.

use crate::simchamber::{ActuatorBank, DosingPump, Pump};

use super::config::DosingCalibration;
use super::effects::{Effect, EffectCommand};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("dosing calibration for {pump:?} must be positive, got {flow}")]
pub struct BadCalibration {
    pub pump: Pump,
    pub flow: f64,
}

/// Dose volume still owed to each pump, ml.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoseCarry {
    pending_ml: [f64; 5],
}

impl DoseCarry {
    pub fn pending(&self, pump: Pump) -> f64 {
        self.pending_ml[pump.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.pending_ml.iter().all(|&v| v == 0.0)
    }

    pub fn clear(&mut self) {
        self.pending_ml = [0.0; 5];
    }
}

fn pump_for(effect: Effect) -> Option<Pump> {
    match effect {
        Effect::DosePhUp => Some(Pump::PhUp),
        Effect::DosePhDown => Some(Pump::PhDown),
        Effect::DoseNutrientA => Some(Pump::NutrientA),
        Effect::DoseNutrientB => Some(Pump::NutrientB),
        Effect::AddFreshWater => Some(Pump::FreshWater),
        _ => None,
    }
}

/// Converts one control period's commands into actuator settings.
///
/// Fractions pass through (the largest wins when repeated), switches turn on
/// at magnitude 1, and dose volumes become pump run time `ml / flow`. Run time
/// is capped at `period_s`; whatever does not fit is carried into `carry` and
/// delivered first on the next call.
pub fn translate(
    commands: &[EffectCommand],
    calibration: &DosingCalibration,
    period_s: f64,
    carry: &mut DoseCarry,
) -> Result<ActuatorBank<f64>, BadCalibration> {
    for pump in Pump::ALL {
        let flow = calibration.flow(pump);
        if !(flow > 0.0) {
            return Err(BadCalibration { pump, flow });
        }
    }
    let mut bank = ActuatorBank::<f64>::all_off();
    let mut requested = carry.pending_ml;
    for cmd in commands {
        let m = cmd.magnitude;
        let on = m >= 0.5;
        match cmd.effect {
            Effect::Heat => bank.heater = bank.heater.max(m),
            Effect::Cool => bank.chiller = bank.chiller.max(m),
            Effect::Humidify => bank.humidifier = bank.humidifier.max(m),
            Effect::IlluminateRed => bank.light_red = bank.light_red.max(m),
            Effect::IlluminateBlue => bank.light_blue = bank.light_blue.max(m),
            Effect::IlluminateWhite => bank.light_white = bank.light_white.max(m),
            Effect::Vent => bank.vent_open |= on,
            Effect::Circulate => {
                if on {
                    bank.circulation_fan = 1.0;
                }
            }
            Effect::Aerate => {
                bank.aerator |= on;
                bank.water_pump |= on;
            }
            e => {
                let pump = pump_for(e).expect("dose effect");
                requested[pump.index()] += m;
            }
        }
    }
    // keep heater and chiller exclusive even for conflicting manual orders
    if bank.heater > 0.0 && bank.chiller > 0.0 {
        if bank.heater >= bank.chiller {
            bank.chiller = 0.0;
        } else {
            bank.heater = 0.0;
        }
    }
    for pump in Pump::ALL {
        let flow = calibration.flow(pump);
        let want = requested[pump.index()];
        let run_s = (want / flow).min(period_s);
        let delivered = run_s * flow;
        carry.pending_ml[pump.index()] = if run_s < period_s { 0.0 } else { (want - delivered).max(0.0) };
        *bank.pump_mut(pump) = if run_s > 0.0 { DosingPump { flow_ml_s: flow, run_s } } else { DosingPump::off() };
    }
    Ok(bank)
}
