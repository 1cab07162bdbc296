//! Hardware-agnostic actuation orders.
//!
//! The planner speaks in effects ("dose 20 ml of pH up", "heat at 40 %");
//! [`super::translate`] turns them into device settings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::variable::Variable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Heat,
    Cool,
    Humidify,
    Vent,
    IlluminateRed,
    IlluminateBlue,
    IlluminateWhite,
    Circulate,
    DosePhUp,
    DosePhDown,
    DoseNutrientA,
    DoseNutrientB,
    AddFreshWater,
    Aerate,
}

/// What a command's magnitude means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Continuous output in `[0, 1]`.
    Fraction,
    /// Volume in ml, `>= 0`.
    Volume,
    /// `0` or `1`.
    Switch,
}

impl Effect {
    pub const ALL: [Effect; 14] = [
        Effect::Heat,
        Effect::Cool,
        Effect::Humidify,
        Effect::Vent,
        Effect::IlluminateRed,
        Effect::IlluminateBlue,
        Effect::IlluminateWhite,
        Effect::Circulate,
        Effect::DosePhUp,
        Effect::DosePhDown,
        Effect::DoseNutrientA,
        Effect::DoseNutrientB,
        Effect::AddFreshWater,
        Effect::Aerate,
    ];

    pub fn domain(self) -> Domain {
        match self {
            Effect::Heat
            | Effect::Cool
            | Effect::Humidify
            | Effect::IlluminateRed
            | Effect::IlluminateBlue
            | Effect::IlluminateWhite => Domain::Fraction,
            Effect::DosePhUp
            | Effect::DosePhDown
            | Effect::DoseNutrientA
            | Effect::DoseNutrientB
            | Effect::AddFreshWater => Domain::Volume,
            Effect::Vent | Effect::Circulate | Effect::Aerate => Domain::Switch,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Effect::Heat => "heat",
            Effect::Cool => "cool",
            Effect::Humidify => "humidify",
            Effect::Vent => "vent",
            Effect::IlluminateRed => "illuminate_red",
            Effect::IlluminateBlue => "illuminate_blue",
            Effect::IlluminateWhite => "illuminate_white",
            Effect::Circulate => "circulate",
            Effect::DosePhUp => "dose_ph_up",
            Effect::DosePhDown => "dose_ph_down",
            Effect::DoseNutrientA => "dose_nutrient_a",
            Effect::DoseNutrientB => "dose_nutrient_b",
            Effect::AddFreshWater => "add_fresh_water",
            Effect::Aerate => "aerate",
        }
    }

    pub fn accepts(self, magnitude: f64) -> bool {
        match self.domain() {
            Domain::Fraction => (0.0..=1.0).contains(&magnitude),
            Domain::Volume => magnitude >= 0.0 && magnitude.is_finite(),
            Domain::Switch => magnitude == 0.0 || magnitude == 1.0,
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Effect {
    type Err = EffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Effect::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| EffectError::UnknownEffect(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EffectError {
    #[error("unknown effect `{0}`")]
    UnknownEffect(String),
    #[error("magnitude {magnitude} outside the domain of {effect}")]
    OutOfDomain { effect: Effect, magnitude: f64 },
}

/// A single effect order. `cause` names the variable whose controller
/// produced it; manual and housekeeping orders have none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectCommand {
    pub effect: Effect,
    pub magnitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<Variable>,
}

impl EffectCommand {
    pub fn new(effect: Effect, magnitude: f64) -> Result<Self, EffectError> {
        if !effect.accepts(magnitude) {
            return Err(EffectError::OutOfDomain { effect, magnitude });
        }
        Ok(EffectCommand { effect, magnitude, cause: None })
    }

    pub(crate) fn caused(effect: Effect, magnitude: f64, cause: Variable) -> Self {
        debug_assert!(effect.accepts(magnitude), "{effect} {magnitude}");
        EffectCommand { effect, magnitude, cause: Some(cause) }
    }
}
