//! The Plan stage: sensed vs desired errors to effect commands.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::simchamber::{Reading, Readings};
use crate::variable::Variable;

use super::config::{ControllerConfig, ControllerKind};
use super::effects::{Effect, EffectCommand};
use super::pid::{pid_update, PidState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Running,
    Ended,
    Aborted,
}

/// Per-variable controller memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoopState {
    Pid(PidState<f64>),
    /// Current relay position: -1, 0 or +1.
    Relay(i8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub recipe_id: String,
    /// Wall-clock seconds since the Unix epoch at start (0 for headless runs).
    pub start_wall_time: u64,
    pub elapsed: u64,
    pub phase: Phase,
    pub loops: BTreeMap<Variable, LoopState>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("illegal phase transition {from:?} -> {to:?}")]
pub struct PhaseError {
    pub from: Phase,
    pub to: Phase,
}

impl RunState {
    pub fn new(recipe_id: impl Into<String>, start_wall_time: u64) -> Self {
        RunState {
            recipe_id: recipe_id.into(),
            start_wall_time,
            elapsed: 0,
            phase: Phase::Running,
            loops: BTreeMap::new(),
        }
    }

    /// Moves out of `Running`; every other transition is rejected.
    pub fn transition(&mut self, to: Phase) -> Result<(), PhaseError> {
        if self.phase != Phase::Running || to == Phase::Running {
            return Err(PhaseError { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }
}

fn relay_update(position: i8, error: f64, hysteresis: f64) -> i8 {
    let half = hysteresis / 2.0;
    if error > half {
        1
    } else if error < -half {
        -1
    } else if (position > 0 && error <= 0.0) || (position < 0 && error >= 0.0) {
        0
    } else {
        position
    }
}

/// Signed drive for one variable, updating its loop state.
fn drive(kind: ControllerKind, state: Option<LoopState>, error: f64, dt: f64) -> Option<(f64, LoopState)> {
    match kind {
        ControllerKind::Pid(gains) => {
            let pid = match state {
                Some(LoopState::Pid(p)) if p.gains == gains => p,
                Some(LoopState::Pid(p)) => PidState { gains, ..p },
                _ => PidState::new(gains),
            };
            let (u, next) = pid_update(&pid, error, dt);
            Some((u, LoopState::Pid(next)))
        }
        ControllerKind::BangBang { hysteresis, magnitude } => {
            let position = match state {
                Some(LoopState::Relay(p)) => p,
                _ => 0,
            };
            let next = relay_update(position, error, hysteresis);
            Some((f64::from(next) * magnitude, LoopState::Relay(next)))
        }
        ControllerKind::OpenLoop | ControllerKind::None => None,
    }
}

fn push(out: &mut Vec<EffectCommand>, effect: Effect, magnitude: f64, cause: Variable) {
    if magnitude > 0.0 {
        out.push(EffectCommand::caused(effect, magnitude, cause));
    }
}

/// Maps a signed controller output onto the effects available for `v`.
fn effects_for(v: Variable, u: f64, out: &mut Vec<EffectCommand>) {
    use Variable::*;
    let pos = u.max(0.0);
    let neg = (-u).max(0.0);
    match v {
        AirTemperature => {
            // heat and cool are never both issued
            push(out, Effect::Heat, pos.min(1.0), v);
            push(out, Effect::Cool, neg.min(1.0), v);
        }
        AirHumidity => {
            push(out, Effect::Humidify, pos.min(1.0), v);
            push(out, Effect::Vent, if neg > 0.0 { 1.0 } else { 0.0 }, v);
        }
        AirCarbonDioxide => push(out, Effect::Vent, if neg > 0.0 { 1.0 } else { 0.0 }, v),
        WaterPotentialHydrogen => {
            push(out, Effect::DosePhUp, pos, v);
            push(out, Effect::DosePhDown, neg, v);
        }
        WaterElectricalConductivity => {
            push(out, Effect::DoseNutrientA, pos, v);
            push(out, Effect::DoseNutrientB, pos, v);
        }
        WaterLevel => push(out, Effect::AddFreshWater, pos, v),
        // no water heater or chiller on the reservoir
        WaterTemperature => {}
        LightIlluminance => {}
    }
}

/// Computes this tick's effect commands.
///
/// Variables without a valid reading are skipped for the tick. Circulation
/// and aeration run whenever the phase is `Running`.
pub fn plan(
    sensed: &Readings,
    desired: &BTreeMap<Variable, f64>,
    config: &ControllerConfig,
    run: &RunState,
    dt: f64,
) -> (Vec<EffectCommand>, RunState) {
    let mut next = run.clone();
    let mut commands = Vec::new();
    for (&v, &target) in desired {
        let Some(Reading::Valid(measured)) = sensed.get(&v).copied() else {
            continue;
        };
        let kind = config.kind(v);
        if v == Variable::LightIlluminance {
            if kind == ControllerKind::OpenLoop {
                push(&mut commands, Effect::IlluminateWhite, (target / v.max()).clamp(0.0, 1.0), v);
            }
            continue;
        }
        if let Some((u, state)) = drive(kind, run.loops.get(&v).copied(), target - measured, dt) {
            next.loops.insert(v, state);
            effects_for(v, u, &mut commands);
        }
    }
    if run.phase == Phase::Running {
        commands.push(EffectCommand { effect: Effect::Circulate, magnitude: 1.0, cause: None });
        commands.push(EffectCommand { effect: Effect::Aerate, magnitude: 1.0, cause: None });
    }
    (commands, next)
}
