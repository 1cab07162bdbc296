use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::variable::Variable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Measured,
    Desired,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Measured => "measured",
            Stream::Desired => "desired",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "measured" => Ok(Stream::Measured),
            "desired" => Ok(Stream::Desired),
            other => Err(format!("unknown stream `{other}`")),
        }
    }
}

/// One telemetry sample. `value` is `None` when there was nothing to record:
/// a sensor still warming up, or no active setpoint for the variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub timestamp: u64,
    pub variable: Variable,
    pub value: Option<f64>,
    pub stream: Stream,
    pub run_id: String,
}

impl DataPoint {
    /// Canonical ordering key: `(timestamp, variable name, stream)`.
    pub fn sort_key(&self) -> (u64, &'static str, Stream) {
        (self.timestamp, self.variable.name(), self.stream)
    }
}

/// Maximum number of points per `datapoint_batch` document.
pub const MAX_BATCH_POINTS: usize = 1000;

/// Accumulates whole ticks of points and cuts batches at tick boundaries.
#[derive(Debug, Default)]
pub struct BatchWriter {
    pending: Vec<DataPoint>,
}

impl BatchWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one tick. Returns a full batch when the tick would not fit.
    pub fn push_tick(&mut self, tick: Vec<DataPoint>) -> Option<Vec<DataPoint>> {
        let out = if !self.pending.is_empty() && self.pending.len() + tick.len() > MAX_BATCH_POINTS {
            Some(std::mem::take(&mut self.pending))
        } else {
            None
        };
        self.pending.extend(tick);
        out
    }

    pub fn finish(&mut self) -> Option<Vec<DataPoint>> {
        (!self.pending.is_empty()).then(|| std::mem::take(&mut self.pending))
    }

    pub fn pending(&self) -> &[DataPoint] {
        &self.pending
    }
}
