use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::simchamber::Pump;
use crate::variable::Variable;

use super::pid::PidGains;

/// How one variable is driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerKind {
    Pid(PidGains<f64>),
    /// Relay that engages when the error leaves `±hysteresis / 2` and
    /// releases when the error crosses zero. Output is `±magnitude`.
    #[serde(rename = "bangbang")]
    BangBang { hysteresis: f64, magnitude: f64 },
    /// Output set directly from the desired value (lights).
    OpenLoop,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostRecipePolicy {
    /// Keep regulating at the final setpoints.
    HoldLast,
    AllOff,
}

/// Flow of each dosing pump, ml/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosingCalibration {
    pub ph_up: f64,
    pub ph_down: f64,
    pub nutrient_a: f64,
    pub nutrient_b: f64,
    pub fresh_water: f64,
}

impl DosingCalibration {
    pub fn uniform(flow_ml_s: f64) -> Self {
        DosingCalibration {
            ph_up: flow_ml_s,
            ph_down: flow_ml_s,
            nutrient_a: flow_ml_s,
            nutrient_b: flow_ml_s,
            fresh_water: flow_ml_s,
        }
    }

    pub fn flow(&self, pump: Pump) -> f64 {
        match pump {
            Pump::PhUp => self.ph_up,
            Pump::PhDown => self.ph_down,
            Pump::NutrientA => self.nutrient_a,
            Pump::NutrientB => self.nutrient_b,
            Pump::FreshWater => self.fresh_water,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub control_period_s: u64,
    pub post_recipe: PostRecipePolicy,
    pub dosing_calibration: DosingCalibration,
    pub controllers: BTreeMap<Variable, ControllerKind>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid controller configuration: {0}")]
pub struct ConfigError(pub String);

impl Default for ControllerConfig {
    fn default() -> Self {
        use Variable::*;
        let pid = |kp, ki, kd, windup_limit| {
            ControllerKind::Pid(PidGains { kp, ki, kd, output_min: -1.0, output_max: 1.0, windup_limit })
        };
        let controllers = BTreeMap::from([
            (AirTemperature, pid(0.4, 0.01, 0.05, 50.0)),
            (AirHumidity, pid(0.05, 0.0005, 0.0, 200.0)),
            (AirCarbonDioxide, pid(0.01, 0.0, 0.0, 100.0)),
            (WaterTemperature, ControllerKind::None),
            (WaterPotentialHydrogen, ControllerKind::BangBang { hysteresis: 0.4, magnitude: 1.0 }),
            (WaterElectricalConductivity, ControllerKind::BangBang { hysteresis: 200.0, magnitude: 2.0 }),
            (LightIlluminance, ControllerKind::OpenLoop),
            (WaterLevel, ControllerKind::BangBang { hysteresis: 10.0, magnitude: 5.0 }),
        ]);
        ControllerConfig {
            control_period_s: 10,
            post_recipe: PostRecipePolicy::HoldLast,
            dosing_calibration: DosingCalibration::uniform(1.0),
            controllers,
        }
    }
}

impl ControllerConfig {
    pub fn kind(&self, v: Variable) -> ControllerKind {
        self.controllers.get(&v).copied().unwrap_or(ControllerKind::None)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.control_period_s < 1 {
            return Err(ConfigError("control_period_s must be at least 1".into()));
        }
        for pump in Pump::ALL {
            if !(self.dosing_calibration.flow(pump) > 0.0) {
                return Err(ConfigError(format!("dosing calibration for {pump:?} must be positive")));
            }
        }
        for (v, kind) in &self.controllers {
            match kind {
                ControllerKind::Pid(g) => g.validate().map_err(|e| ConfigError(format!("{v}: {e}")))?,
                ControllerKind::BangBang { hysteresis, magnitude } => {
                    if !(*hysteresis > 0.0) {
                        return Err(ConfigError(format!("{v}: hysteresis must be positive")));
                    }
                    if !(*magnitude >= 0.0) {
                        return Err(ConfigError(format!("{v}: magnitude must be non-negative")));
                    }
                }
                ControllerKind::OpenLoop if *v != Variable::LightIlluminance => {
                    return Err(ConfigError(format!("{v}: open_loop is only available for light_illuminance")));
                }
                ControllerKind::OpenLoop | ControllerKind::None => {}
            }
        }
        Ok(())
    }

    /// Applies a JSON merge patch to the serialized form and re-validates.
    pub fn patched(&self, patch: &Value) -> Result<ControllerConfig, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        merge_patch(&mut doc, patch);
        let next: ControllerConfig = serde_json::from_value(doc).map_err(|e| ConfigError(e.to_string()))?;
        next.validate()?;
        Ok(next)
    }
}

/// JSON merge patch: objects merge recursively, `null` deletes, anything else
/// replaces.
pub fn merge_patch(target: &mut Value, patch: &Value) {
    let Value::Object(patch_obj) = patch else {
        *target = patch.clone();
        return;
    };
    if !target.is_object() {
        *target = Value::Object(Default::default());
    }
    let obj = target.as_object_mut().unwrap();
    for (k, v) in patch_obj {
        if v.is_null() {
            obj.remove(k);
        } else {
            merge_patch(obj.entry(k.clone()).or_insert(Value::Null), v);
        }
    }
}
