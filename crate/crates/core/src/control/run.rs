use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::Serialize;

use crate::datastore::{DataPoint, Stream};
use crate::recipe::{compile, Recipe, RecipeTimeline};
use crate::simchamber::{
    read_sensors, scenario_preset, step, ActuatorBank, ChamberParams, EnvironmentState, PresetError, Reading,
    Readings, SensorModel, SimError,
};
use crate::variable::Variable;

use super::config::{ConfigError, ControllerConfig, PostRecipePolicy};
use super::effects::EffectCommand;
use super::planner::{plan, Phase, RunState};
use super::translate::{translate, BadCalibration, DoseCarry};

/// The simulated plant plus its sensors.
#[derive(Debug, Clone)]
pub struct Chamber {
    pub state: EnvironmentState<f64>,
    pub params: ChamberParams<f64>,
    pub sensors: SensorModel,
    pub seed: u64,
    powered_at: u64,
}

impl Chamber {
    pub fn new(state: EnvironmentState<f64>, params: ChamberParams<f64>, sensors: SensorModel, seed: u64) -> Self {
        let powered_at = state.sim_time;
        Chamber { state, params, sensors, seed, powered_at }
    }

    pub fn from_preset(name: &str, seed: u64) -> Result<Chamber, PresetError> {
        let s = scenario_preset(name)?;
        Ok(Chamber::new(s.state, s.params, s.sensors, seed))
    }

    pub fn since_power_on(&self) -> u64 {
        self.state.sim_time - self.powered_at
    }

    pub fn sense(&self) -> Readings {
        read_sensors(&self.state, &self.sensors, self.seed, self.since_power_on())
    }

    pub fn act(&mut self, bank: &ActuatorBank<f64>, dt: u64) -> Result<(), SimError> {
        self.state = step(&self.state, bank, &self.params, dt)?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("run aborted at {} s", .0.final_state.elapsed)]
    AbortRequested(Box<RunLog>),
    #[error("a run is already active")]
    RunActive,
    #[error("no run is active")]
    NoActiveRun,
    #[error("manual actuation during an active run requires override")]
    ActuationDuringRun,
    #[error("duration limit {limit} s is shorter than the control period {period} s")]
    LimitTooShort { limit: u64, period: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Calibration(#[from] BadCalibration),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("control loop is not running")]
    LoopStopped,
}

impl ControlError {
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::AbortRequested(_) => "abort_requested",
            ControlError::RunActive => "run_active",
            ControlError::NoActiveRun => "no_active_run",
            ControlError::ActuationDuringRun => "actuation_during_run",
            ControlError::LimitTooShort { .. } => "limit_too_short",
            ControlError::Config(_) => "invalid_config",
            ControlError::Calibration(_) => "bad_calibration",
            ControlError::Sim(_) => "simulation_error",
            ControlError::LoopStopped => "loop_stopped",
        }
    }
}

/// An operator order: continuous effects are held for `duration_s`, doses
/// are issued once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManualOrder {
    pub command: EffectCommand,
    pub duration_s: u64,
}

#[derive(Debug, Clone)]
struct PendingManual {
    order: ManualOrder,
    remaining_s: u64,
    issued: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RecipeEnded,
    LimitReached,
    Aborted,
}

#[derive(Debug, Clone)]
struct ActiveRun {
    run_id: String,
    timeline: RecipeTimeline,
    state: RunState,
    duration_limit: Option<u64>,
    hold: BTreeMap<Variable, f64>,
    stop: Option<StopReason>,
}

/// Everything that happened in one control period.
#[derive(Debug, Clone, Serialize)]
pub struct TickReport {
    /// Simulated seconds since power-on at the start of the tick.
    pub time: u64,
    pub run_id: Option<String>,
    pub elapsed: Option<u64>,
    pub readings: Readings,
    pub desired: BTreeMap<Variable, f64>,
    #[serde(skip)]
    pub points: Vec<DataPoint>,
    pub commands: Vec<EffectCommand>,
    pub manual: Vec<EffectCommand>,
    pub bank: ActuatorBank<f64>,
    pub finished: Option<StopReason>,
}

/// The recorded telemetry of one tick: every variable on both streams,
/// `None` where there is no valid reading or no active setpoint.
pub fn tick_points(run_id: &str, elapsed: u64, readings: &Readings, desired: &BTreeMap<Variable, f64>) -> Vec<DataPoint> {
    let mut out = Vec::with_capacity(2 * Variable::ALL.len());
    for v in Variable::ALL {
        let measured = readings.get(&v).copied().and_then(Reading::value);
        out.push(DataPoint { timestamp: elapsed, variable: v, value: measured, stream: Stream::Measured, run_id: run_id.into() });
        out.push(DataPoint {
            timestamp: elapsed,
            variable: v,
            value: desired.get(&v).copied(),
            stream: Stream::Desired,
            run_id: run_id.into(),
        });
    }
    out
}

/// Drives a chamber one control period at a time.
#[derive(Debug, Clone)]
pub struct Controller {
    chamber: Chamber,
    config: ControllerConfig,
    carry: DoseCarry,
    run: Option<ActiveRun>,
    manual: Vec<PendingManual>,
    bank: ActuatorBank<f64>,
}

impl Controller {
    pub fn new(chamber: Chamber, config: ControllerConfig) -> Result<Controller, ControlError> {
        config.validate()?;
        if config.control_period_s % chamber.params.integration_step != 0 {
            return Err(SimError::StepMismatch {
                dt: config.control_period_s,
                integration_step: chamber.params.integration_step,
            }
            .into());
        }
        Ok(Controller {
            chamber,
            config,
            carry: DoseCarry::default(),
            run: None,
            manual: Vec::new(),
            bank: ActuatorBank::all_off(),
        })
    }

    pub fn chamber(&self) -> &Chamber {
        &self.chamber
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn bank(&self) -> &ActuatorBank<f64> {
        &self.bank
    }

    pub fn carry(&self) -> &DoseCarry {
        &self.carry
    }

    pub fn set_config(&mut self, config: ControllerConfig) -> Result<(), ControlError> {
        config.validate()?;
        if config.control_period_s % self.chamber.params.integration_step != 0 {
            return Err(ConfigError("control period must be a multiple of the integration step".into()).into());
        }
        self.config = config;
        Ok(())
    }

    pub fn run_state(&self) -> Option<&RunState> {
        self.run.as_ref().map(|r| &r.state)
    }

    pub fn run_id(&self) -> Option<&str> {
        self.run.as_ref().map(|r| r.run_id.as_str())
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.run.as_ref().and_then(|r| r.stop)
    }

    pub fn timeline(&self) -> Option<&RecipeTimeline> {
        self.run.as_ref().map(|r| &r.timeline)
    }

    pub fn is_running(&self) -> bool {
        self.run.as_ref().is_some_and(|r| r.state.phase == Phase::Running)
    }

    pub fn start_run(
        &mut self,
        recipe: &Recipe,
        run_id: impl Into<String>,
        start_wall_time: u64,
        duration_limit: Option<u64>,
    ) -> Result<(), ControlError> {
        if self.is_running() {
            return Err(ControlError::RunActive);
        }
        if let Some(limit) = duration_limit {
            if limit < self.config.control_period_s {
                return Err(ControlError::LimitTooShort { limit, period: self.config.control_period_s });
            }
        }
        self.run = Some(ActiveRun {
            run_id: run_id.into(),
            timeline: compile(recipe),
            state: RunState::new(recipe.id(), start_wall_time),
            duration_limit,
            hold: BTreeMap::new(),
            stop: None,
        });
        Ok(())
    }

    /// Aborts the active run and turns every actuator off.
    pub fn abort(&mut self) -> Result<String, ControlError> {
        let run = self.run.as_mut().filter(|r| r.state.phase == Phase::Running).ok_or(ControlError::NoActiveRun)?;
        run.state.transition(Phase::Aborted).expect("running run can abort");
        run.stop = Some(StopReason::Aborted);
        self.carry.clear();
        self.manual.clear();
        self.bank = ActuatorBank::all_off();
        Ok(run.run_id.clone())
    }

    /// Queues a manual order for the next tick.
    pub fn actuate(&mut self, order: ManualOrder, override_run: bool) -> Result<(), ControlError> {
        if self.is_running() && !override_run {
            return Err(ControlError::ActuationDuringRun);
        }
        self.manual.push(PendingManual { order, remaining_s: order.duration_s.max(1), issued: false });
        Ok(())
    }

    fn take_manual(&mut self, period: u64) -> Vec<EffectCommand> {
        let mut out = Vec::new();
        for m in &mut self.manual {
            let is_dose = m.order.command.effect.domain() == super::effects::Domain::Volume;
            if is_dose {
                if !m.issued {
                    out.push(m.order.command);
                }
                m.issued = true;
                m.remaining_s = 0;
            } else {
                out.push(m.order.command);
                m.issued = true;
                m.remaining_s = m.remaining_s.saturating_sub(period);
            }
        }
        self.manual.retain(|m| m.remaining_s > 0);
        out
    }

    /// One Sense → Plan → Act cycle.
    pub fn tick(&mut self) -> Result<TickReport, ControlError> {
        let period = self.config.control_period_s;
        let time = self.chamber.since_power_on();
        let readings = self.chamber.sense();
        let mut desired = BTreeMap::new();
        let mut points = Vec::new();
        let mut commands = Vec::new();
        let mut finished = None;
        let mut elapsed = None;
        let mut run_id = None;

        if let Some(run) = self.run.as_mut() {
            run_id = Some(run.run_id.clone());
            elapsed = Some(run.state.elapsed);
            match run.state.phase {
                Phase::Running => {
                    let active = run.timeline.setpoints_at(run.state.elapsed);
                    points = tick_points(&run.run_id, run.state.elapsed, &readings, &active.values);
                    desired = active.values;
                    let limit_hit = run.duration_limit.is_some_and(|l| run.state.elapsed >= l);
                    if active.ended || limit_hit {
                        run.state.transition(Phase::Ended).expect("running run can end");
                        let reason = if active.ended { StopReason::RecipeEnded } else { StopReason::LimitReached };
                        run.stop = Some(reason);
                        finished = Some(reason);
                        match self.config.post_recipe {
                            PostRecipePolicy::HoldLast => run.hold = desired.clone(),
                            PostRecipePolicy::AllOff => {
                                run.hold.clear();
                                desired.clear();
                                self.carry.clear();
                            }
                        }
                    }
                }
                Phase::Ended => desired = run.hold.clone(),
                Phase::Aborted => {}
            }
            if run.state.phase != Phase::Aborted {
                let (cmds, next) = plan(&readings, &desired, &self.config, &run.state, period as f64);
                run.state = next;
                commands = cmds;
            }
            if run.state.phase == Phase::Running {
                run.state.elapsed += period;
            }
        }

        let manual = self.take_manual(period);
        let mut all = commands.clone();
        all.extend(manual.iter().copied());
        let bank = translate(&all, &self.config.dosing_calibration, period as f64, &mut self.carry)?;
        self.chamber.act(&bank, period)?;
        self.bank = bank;
        Ok(TickReport { time, run_id, elapsed, readings, desired, points, commands, manual, bank, finished })
    }
}

/// Commands issued at one tick of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickActuation {
    pub elapsed: u64,
    pub commands: Vec<EffectCommand>,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub run_id: String,
    pub recipe_id: String,
    pub points: Vec<DataPoint>,
    pub actuations: Vec<TickActuation>,
    pub final_state: RunState,
    pub final_bank: ActuatorBank<f64>,
    pub stop: StopReason,
    pub ticks: u64,
}

/// Runs `recipe` headless until it ends or `duration_limit` simulated
/// seconds have elapsed. Ticks happen at `0, period, 2·period, …`; the tick
/// at which the recipe ends is recorded and then the post-recipe policy
/// decides the final actuator bank.
pub fn run_recipe(
    recipe: &Recipe,
    chamber: &mut Chamber,
    config: &ControllerConfig,
    duration_limit: u64,
    abort: Option<&AtomicBool>,
) -> Result<RunLog, ControlError> {
    run_recipe_with(recipe, chamber, config, duration_limit, abort, &mut |_| {})
}

/// [`run_recipe`], calling `after_tick` with the elapsed run time after
/// every tick. Used for wall-clock pacing; it cannot change the outcome.
pub fn run_recipe_with(
    recipe: &Recipe,
    chamber: &mut Chamber,
    config: &ControllerConfig,
    duration_limit: u64,
    abort: Option<&AtomicBool>,
    after_tick: &mut dyn FnMut(u64),
) -> Result<RunLog, ControlError> {
    let run_id = format!("sim-{}-{}", recipe.id(), chamber.seed);
    let mut ctl = Controller::new(chamber.clone(), config.clone())?;
    ctl.start_run(recipe, &run_id, 0, Some(duration_limit))?;
    let mut points = Vec::new();
    let mut actuations = Vec::new();
    let mut ticks = 0;
    let stop = loop {
        if abort.is_some_and(|a| a.load(Ordering::SeqCst)) {
            ctl.abort()?;
            *chamber = ctl.chamber.clone();
            let run = ctl.run.expect("run present");
            return Err(ControlError::AbortRequested(Box::new(RunLog {
                run_id,
                recipe_id: recipe.id().into(),
                points,
                actuations,
                final_state: run.state,
                final_bank: ctl.bank,
                stop: StopReason::Aborted,
                ticks,
            })));
        }
        let report = ctl.tick()?;
        ticks += 1;
        after_tick(report.elapsed.unwrap_or(0));
        points.extend(report.points);
        actuations.push(TickActuation { elapsed: report.elapsed.unwrap_or(0), commands: report.commands });
        if let Some(reason) = report.finished {
            break reason;
        }
    };
    *chamber = ctl.chamber.clone();
    let run = ctl.run.expect("run present");
    Ok(RunLog {
        run_id,
        recipe_id: recipe.id().into(),
        points,
        actuations,
        final_state: run.state,
        final_bank: ctl.bank,
        stop,
        ticks,
    })
}
