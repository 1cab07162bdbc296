//! Long-running control loop with an ordered command queue.
//!
//! Requests from any thread go through [`ControlHandle`]; the loop drains
//! them between ticks, so each mutation is applied whole at a tick boundary.
//! Telemetry is written to the [`Store`] in tick-aligned batches.

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use crate::datastore::{BatchWriter, Store};
use crate::recipe::Recipe;
use crate::simchamber::{ActuatorBank, Readings};
use crate::variable::Variable;

use super::config::ControllerConfig;
use super::effects::EffectCommand;
use super::planner::Phase;
use super::run::{ControlError, Controller, ManualOrder, StopReason, TickReport};

/// How fast simulated time runs relative to wall time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// As fast as possible while a run is active.
    Max,
    /// Simulated seconds per wall second.
    Speed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub recipe_id: String,
    pub elapsed: u64,
    pub duration: u64,
    pub phase: Phase,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActuationRecord {
    /// Simulated seconds since power-on.
    pub time: u64,
    pub effect: String,
    pub magnitude: f64,
    pub source: &'static str,
}

/// Snapshot published after every tick.
#[derive(Debug, Clone, Serialize)]
pub struct LiveStatus {
    pub time: u64,
    pub ticks: u64,
    pub run: Option<RunSummary>,
    pub sensed: Readings,
    pub desired: BTreeMap<Variable, f64>,
    pub actuators: ActuatorBank<f64>,
    pub recent_actuations: VecDeque<ActuationRecord>,
}

const RECENT_ACTUATIONS: usize = 100;

enum Request {
    StartRun(Recipe, Sender<Result<String, ControlError>>),
    Abort(Sender<Result<String, ControlError>>),
    Actuate(ManualOrder, bool, Sender<Result<(), ControlError>>),
    SetConfig(ControllerConfig, Sender<Result<(), ControlError>>),
    Shutdown,
}

/// Cloneable entry point to a running loop.
#[derive(Clone)]
pub struct ControlHandle {
    tx: Sender<Request>,
    status: Arc<RwLock<LiveStatus>>,
    config: Arc<RwLock<ControllerConfig>>,
}

impl ControlHandle {
    fn call<T>(&self, make: impl FnOnce(Sender<Result<T, ControlError>>) -> Request) -> Result<T, ControlError> {
        let (tx, rx) = mpsc::channel();
        self.tx.send(make(tx)).map_err(|_| ControlError::LoopStopped)?;
        rx.recv().map_err(|_| ControlError::LoopStopped)?
    }

    /// Starts a run of `recipe`; returns the run id.
    pub fn start_run(&self, recipe: Recipe) -> Result<String, ControlError> {
        self.call(|tx| Request::StartRun(recipe, tx))
    }

    pub fn abort(&self) -> Result<String, ControlError> {
        self.call(Request::Abort)
    }

    pub fn actuate(&self, order: ManualOrder, override_run: bool) -> Result<(), ControlError> {
        self.call(|tx| Request::Actuate(order, override_run, tx))
    }

    pub fn set_config(&self, config: ControllerConfig) -> Result<(), ControlError> {
        self.call(|tx| Request::SetConfig(config, tx))
    }

    pub fn config(&self) -> ControllerConfig {
        self.config.read().unwrap().clone()
    }

    pub fn status(&self) -> LiveStatus {
        self.status.read().unwrap().clone()
    }

    pub fn shutdown(&self) {
        let _ = self.tx.send(Request::Shutdown);
    }
}

fn wall_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Loop {
    ctl: Controller,
    store: Arc<Store>,
    batches: BatchWriter,
    status: Arc<RwLock<LiveStatus>>,
    config: Arc<RwLock<ControllerConfig>>,
    ticks: u64,
}

impl Loop {
    fn flush(&mut self, final_batch: bool) {
        let batch = if final_batch { self.batches.finish() } else { None };
        if let (Some(batch), Some(run_id)) = (batch, self.ctl.run_id()) {
            if let Err(e) = self.store.append_points(run_id, &batch) {
                eprintln!("{}", json!({"level": "error", "msg": "telemetry write failed", "error": e.to_string()}));
            }
        }
    }

    fn write_run_meta(&self, stop: Option<StopReason>) {
        let (Some(run_id), Some(state), Some(tl)) = (self.ctl.run_id(), self.ctl.run_state(), self.ctl.timeline()) else {
            return;
        };
        let meta = json!({
            "recipe_id": state.recipe_id,
            "start_wall_time": state.start_wall_time,
            "timebase": "simulated_seconds_since_run_start",
            "control_period_s": self.ctl.config().control_period_s,
            "duration": tl.duration(),
            "phase": state.phase,
            "stop": stop,
        });
        if let Err(e) = self.store.put_run_meta(run_id, meta) {
            eprintln!("{}", json!({"level": "error", "msg": "run metadata write failed", "error": e.to_string()}));
        }
    }

    fn handle(&mut self, req: Request) -> bool {
        match req {
            Request::StartRun(recipe, reply) => {
                let result = if self.ctl.is_running() {
                    Err(ControlError::RunActive)
                } else {
                    let n = self.store.run_ids().len() + 1;
                    let run_id = format!("run-{n:04}-{}", recipe.id());
                    self.ctl.start_run(&recipe, &run_id, wall_now(), None).map(|()| {
                        self.batches = BatchWriter::new();
                        self.write_run_meta(None);
                        run_id
                    })
                };
                let _ = reply.send(result);
            }
            Request::Abort(reply) => {
                let result = self.ctl.abort();
                if result.is_ok() {
                    self.flush(true);
                    self.write_run_meta(Some(StopReason::Aborted));
                    self.publish(None);
                }
                let _ = reply.send(result);
            }
            Request::Actuate(order, override_run, reply) => {
                let _ = reply.send(self.ctl.actuate(order, override_run));
            }
            Request::SetConfig(config, reply) => {
                let result = self.ctl.set_config(config.clone());
                if result.is_ok() {
                    *self.config.write().unwrap() = config;
                }
                let _ = reply.send(result);
            }
            Request::Shutdown => {
                self.flush(true);
                return false;
            }
        }
        true
    }

    fn tick(&mut self) {
        let report = match self.ctl.tick() {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}", json!({"level": "error", "msg": "tick failed", "error": e.to_string()}));
                return;
            }
        };
        self.ticks += 1;
        if !report.points.is_empty() {
            if let Some(batch) = self.batches.push_tick(report.points.clone()) {
                if let Some(run_id) = self.ctl.run_id() {
                    if let Err(e) = self.store.append_points(run_id, &batch) {
                        eprintln!("{}", json!({"level": "error", "msg": "telemetry write failed", "error": e.to_string()}));
                    }
                }
            }
        }
        if let Some(reason) = report.finished {
            self.flush(true);
            self.write_run_meta(Some(reason));
        }
        self.publish(Some(&report));
    }

    fn publish(&self, report: Option<&TickReport>) {
        let mut status = self.status.write().unwrap();
        status.ticks = self.ticks;
        status.actuators = *self.ctl.bank();
        status.run = match (self.ctl.run_id(), self.ctl.run_state(), self.ctl.timeline()) {
            (Some(run_id), Some(state), Some(tl)) => Some(RunSummary {
                run_id: run_id.into(),
                recipe_id: state.recipe_id.clone(),
                elapsed: state.elapsed,
                duration: tl.duration(),
                phase: state.phase,
                stop: self.ctl.stop_reason(),
            }),
            _ => None,
        };
        if let Some(report) = report {
            status.time = report.time;
            status.sensed = report.readings.clone();
            status.desired = report.desired.clone();
            for cmd in &report.manual {
                push_actuation(&mut status.recent_actuations, report.time, cmd, "manual");
            }
        }
    }
}

fn push_actuation(log: &mut VecDeque<ActuationRecord>, time: u64, cmd: &EffectCommand, source: &'static str) {
    if log.len() == RECENT_ACTUATIONS {
        log.pop_front();
    }
    log.push_back(ActuationRecord { time, effect: cmd.effect.name().into(), magnitude: cmd.magnitude, source });
}

/// Starts the loop on its own thread.
pub fn spawn(ctl: Controller, store: Arc<Store>, pacing: Pacing) -> (ControlHandle, JoinHandle<()>) {
    let (tx, rx) = mpsc::channel();
    let status = Arc::new(RwLock::new(LiveStatus {
        time: 0,
        ticks: 0,
        run: None,
        sensed: ctl.chamber().sense(),
        desired: BTreeMap::new(),
        actuators: *ctl.bank(),
        recent_actuations: VecDeque::new(),
    }));
    let config = Arc::new(RwLock::new(ctl.config().clone()));
    let handle = ControlHandle { tx, status: status.clone(), config: config.clone() };
    let mut lp = Loop { ctl, store, batches: BatchWriter::new(), status, config, ticks: 0 };
    let join = thread::Builder::new()
        .name("control-loop".into())
        .spawn(move || run_loop(&mut lp, rx, pacing))
        .expect("spawn control loop");
    (handle, join)
}

fn run_loop(lp: &mut Loop, rx: Receiver<Request>, pacing: Pacing) {
    loop {
        loop {
            match rx.try_recv() {
                Ok(req) => {
                    if !lp.handle(req) {
                        return;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    lp.flush(true);
                    return;
                }
            }
        }
        lp.tick();
        let period = lp.ctl.config().control_period_s as f64;
        let wait = match pacing {
            Pacing::Max if lp.ctl.is_running() => Duration::ZERO,
            Pacing::Max => Duration::from_millis(2),
            Pacing::Speed(s) => Duration::from_secs_f64(period / s.max(1e-9)),
        };
        if wait.is_zero() {
            continue;
        }
        match rx.recv_timeout(wait) {
            Ok(req) => {
                if !lp.handle(req) {
                    return;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                lp.flush(true);
                return;
            }
        }
    }
}
