use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::scalar::Scalar;
use crate::variable::{Variable, VARIABLE_COUNT};

/// Ground-truth value of every variable at one simulation instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentState<T> {
    values: [T; VARIABLE_COUNT],
    pub sim_time: u64,
}

impl<T: Scalar> EnvironmentState<T> {
    pub fn from_fn(mut f: impl FnMut(Variable) -> T) -> Self {
        EnvironmentState { values: Variable::ALL.map(&mut f), sim_time: 0 }
    }

    pub fn get(&self, v: Variable) -> T {
        self.values[v.index()]
    }

    pub fn set(&mut self, v: Variable, value: T) {
        self.values[v.index()] = value;
    }

    pub fn with(mut self, v: Variable, value: T) -> Self {
        self.set(v, value);
        self
    }

    /// Saturates every variable into its registered range.
    pub fn clamp_all(&mut self) {
        for v in Variable::ALL {
            let x = self.get(v).clamp_to(T::lit(v.min()), T::lit(v.max()));
            self.set(v, x);
        }
    }

    pub fn in_range(&self) -> bool {
        Variable::ALL.iter().all(|&v| {
            let x = self.get(v);
            x >= T::lit(v.min()) && x <= T::lit(v.max())
        })
    }

    pub fn to_map(&self) -> BTreeMap<Variable, f64> {
        Variable::ALL.iter().map(|&v| (v, self.get(v).to_f64_lossy())).collect()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T; VARIABLE_COUNT] {
        &mut self.values
    }
}

impl<T: Scalar> Serialize for EnvironmentState<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(VARIABLE_COUNT + 1))?;
        for v in Variable::ALL {
            map.serialize_entry(v.name(), &self.get(v).to_f64_lossy())?;
        }
        map.serialize_entry("sim_time", &self.sim_time)?;
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pump {
    PhUp,
    PhDown,
    NutrientA,
    NutrientB,
    FreshWater,
}

impl Pump {
    pub const ALL: [Pump; 5] = [Pump::PhUp, Pump::PhDown, Pump::NutrientA, Pump::NutrientB, Pump::FreshWater];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A peristaltic pump: delivers `flow_ml_s` for the first `run_s` seconds of
/// the step it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DosingPump<T> {
    pub flow_ml_s: T,
    pub run_s: T,
}

impl<T: Scalar> DosingPump<T> {
    pub fn off() -> Self {
        DosingPump { flow_ml_s: T::zero(), run_s: T::zero() }
    }

    /// Volume delivered during `[from, from + len)` seconds after step start.
    pub fn volume_between(&self, from: T, len: T) -> T {
        let on = (self.run_s.min(from + len) - from).max(T::zero());
        self.flow_ml_s * on
    }
}

/// Device-level actuator settings held constant over one simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActuatorBank<T> {
    pub heater: T,
    pub chiller: T,
    pub humidifier: T,
    pub vent_open: bool,
    pub light_red: T,
    pub light_blue: T,
    pub light_white: T,
    pub circulation_fan: T,
    pub water_pump: bool,
    pub aerator: bool,
    pub dosing: [DosingPump<T>; 5],
}

impl<T: Scalar> ActuatorBank<T> {
    pub fn all_off() -> Self {
        ActuatorBank {
            heater: T::zero(),
            chiller: T::zero(),
            humidifier: T::zero(),
            vent_open: false,
            light_red: T::zero(),
            light_blue: T::zero(),
            light_white: T::zero(),
            circulation_fan: T::zero(),
            water_pump: false,
            aerator: false,
            dosing: [DosingPump::off(); 5],
        }
    }

    pub fn pump(&self, pump: Pump) -> &DosingPump<T> {
        &self.dosing[pump.index()]
    }

    pub fn pump_mut(&mut self, pump: Pump) -> &mut DosingPump<T> {
        &mut self.dosing[pump.index()]
    }

    pub fn is_all_off(&self) -> bool {
        *self == Self::all_off()
    }

    /// All fractions in `[0, 1]` and all flows non-negative.
    pub fn is_valid(&self) -> bool {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        [
            self.heater,
            self.chiller,
            self.humidifier,
            self.light_red,
            self.light_blue,
            self.light_white,
            self.circulation_fan,
        ]
        .into_iter()
        .all(unit)
            && self.dosing.iter().all(|p| p.flow_ml_s >= T::zero() && p.run_s >= T::zero())
    }

    /// Mean of the three light channel fractions.
    pub fn light_fraction(&self) -> T {
        (self.light_red + self.light_blue + self.light_white) / T::lit(3.0)
    }
}

impl<T: Scalar> Serialize for ActuatorBank<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("heater", &self.heater.to_f64_lossy())?;
        map.serialize_entry("chiller", &self.chiller.to_f64_lossy())?;
        map.serialize_entry("humidifier", &self.humidifier.to_f64_lossy())?;
        map.serialize_entry("vent_open", &self.vent_open)?;
        map.serialize_entry("light_red", &self.light_red.to_f64_lossy())?;
        map.serialize_entry("light_blue", &self.light_blue.to_f64_lossy())?;
        map.serialize_entry("light_white", &self.light_white.to_f64_lossy())?;
        map.serialize_entry("circulation_fan", &self.circulation_fan.to_f64_lossy())?;
        map.serialize_entry("water_pump", &self.water_pump)?;
        map.serialize_entry("aerator", &self.aerator)?;
        for p in Pump::ALL {
            let d = self.pump(p);
            map.serialize_entry(
                &format!("{}_pump", serde_json::to_value(p).unwrap().as_str().unwrap()),
                &serde_json::json!({"flow_ml_s": d.flow_ml_s.to_f64_lossy(), "run_s": d.run_s.to_f64_lossy()}),
            )?;
        }
        map.end()
    }
}
