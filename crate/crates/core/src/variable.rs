//! Environmental variables known to the chamber and their physical ranges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Every environmental variable the chamber senses or controls.
///
/// Declaration order is the canonical iteration order; [`Variable::name`]
/// order (lexicographic) is used for CSV rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    AirTemperature,
    AirHumidity,
    AirCarbonDioxide,
    WaterTemperature,
    WaterPotentialHydrogen,
    WaterElectricalConductivity,
    LightIlluminance,
    WaterLevel,
}

pub const VARIABLE_COUNT: usize = 8;

/// Name, unit and hard range of a variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableDescriptor {
    pub name: &'static str,
    pub unit: &'static str,
    pub min: f64,
    pub max: f64,
}

const REGISTRY: [VariableDescriptor; VARIABLE_COUNT] = [
    VariableDescriptor { name: "air_temperature", unit: "°C", min: -40.0, max: 125.0 },
    VariableDescriptor { name: "air_humidity", unit: "%RH", min: 0.0, max: 100.0 },
    VariableDescriptor { name: "air_carbon_dioxide", unit: "ppm", min: 0.0, max: 2000.0 },
    VariableDescriptor { name: "water_temperature", unit: "°C", min: -10.0, max: 85.0 },
    VariableDescriptor { name: "water_potential_hydrogen", unit: "pH", min: 0.0, max: 14.0 },
    VariableDescriptor { name: "water_electrical_conductivity", unit: "µS/cm", min: 5.0, max: 200_000.0 },
    VariableDescriptor { name: "light_illuminance", unit: "lux", min: 0.0, max: 40_000.0 },
    VariableDescriptor { name: "water_level", unit: "mm", min: 0.0, max: 1000.0 },
];

impl Variable {
    pub const ALL: [Variable; VARIABLE_COUNT] = [
        Variable::AirTemperature,
        Variable::AirHumidity,
        Variable::AirCarbonDioxide,
        Variable::WaterTemperature,
        Variable::WaterPotentialHydrogen,
        Variable::WaterElectricalConductivity,
        Variable::LightIlluminance,
        Variable::WaterLevel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn descriptor(self) -> &'static VariableDescriptor {
        &REGISTRY[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.descriptor().name
    }

    pub fn min(self) -> f64 {
        self.descriptor().min
    }

    pub fn max(self) -> f64 {
        self.descriptor().max
    }

    /// Looks a variable up by its registered name.
    pub fn from_name(name: &str) -> Option<Variable> {
        Variable::ALL.into_iter().find(|v| v.name() == name)
    }

    /// All variables sorted by name, the canonical CSV order.
    pub fn by_name() -> [Variable; VARIABLE_COUNT] {
        let mut all = Variable::ALL;
        all.sort_by_key(|v| v.name());
        all
    }
}

/// The full registry in declaration order.
pub fn registry() -> &'static [VariableDescriptor; VARIABLE_COUNT] {
    &REGISTRY
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown variable `{0}`")]
pub struct UnknownVariable(pub String);

impl FromStr for Variable {
    type Err = UnknownVariable;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variable::from_name(s).ok_or_else(|| UnknownVariable(s.to_string()))
    }
}
