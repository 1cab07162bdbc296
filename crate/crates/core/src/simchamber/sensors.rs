use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};

use crate::scalar::Scalar;
use crate::variable::{Variable, VARIABLE_COUNT};

use super::state::EnvironmentState;

/// Readout characteristics of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorChannel {
    /// Reporting resolution. Zero disables quantization.
    pub quantization: f64,
    /// Standard deviation of additive gaussian noise.
    pub sigma: f64,
    /// Readings are invalid until this long after power-on.
    pub warm_up_s: u64,
    pub min: f64,
    pub max: f64,
}

impl SensorChannel {
    pub fn ideal(v: Variable, quantization: f64) -> Self {
        SensorChannel { quantization, sigma: 0.0, warm_up_s: 0, min: v.min(), max: v.max() }
    }

    pub fn quantize(&self, x: f64) -> f64 {
        if self.quantization <= 0.0 {
            return x;
        }
        // dividing by an integral inverse keeps 25.0 from printing as 25.000000000000004
        let inv = 1.0 / self.quantization;
        if (inv - inv.round()).abs() < 1e-9 {
            (x * inv.round()).round() / inv.round()
        } else {
            (x / self.quantization).round() * self.quantization
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    channels: [SensorChannel; VARIABLE_COUNT],
}

impl SensorModel {
    pub fn new(channels: [SensorChannel; VARIABLE_COUNT]) -> Self {
        SensorModel { channels }
    }

    pub fn channel(&self, v: Variable) -> &SensorChannel {
        &self.channels[v.index()]
    }

    pub fn channel_mut(&mut self, v: Variable) -> &mut SensorChannel {
        &mut self.channels[v.index()]
    }

    pub fn validate(&self) -> Result<(), String> {
        for v in Variable::ALL {
            let c = self.channel(v);
            if !(c.quantization >= 0.0) || !(c.sigma >= 0.0) || !(c.min < c.max) {
                return Err(format!("invalid sensor channel for {v}"));
            }
        }
        Ok(())
    }
}

/// A single sensor reading; `Invalid` while the sensor is warming up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reading {
    Valid(f64),
    Invalid,
}

impl Reading {
    pub fn value(self) -> Option<f64> {
        match self {
            Reading::Valid(x) => Some(x),
            Reading::Invalid => None,
        }
    }
}

impl Serialize for Reading {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Reading::Valid(x) => serializer.serialize_f64(*x),
            Reading::Invalid => serializer.serialize_none(),
        }
    }
}

pub type Readings = BTreeMap<Variable, Reading>;

/// Reads every sensor.
///
/// The noise stream is a pure function of `(rng_seed, elapsed_since_power_on)`:
/// one standard normal draw per variable in declaration order, whether or not
/// the channel is noisy or warmed up.
pub fn read_sensors<T: Scalar>(
    state: &EnvironmentState<T>,
    model: &SensorModel,
    rng_seed: u64,
    elapsed_since_power_on: u64,
) -> Readings {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(elapsed_since_power_on);
    Variable::ALL
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let ch = model.channel(v);
            let reading = if elapsed_since_power_on < ch.warm_up_s {
                Reading::Invalid
            } else {
                let noisy = state.get(v).to_f64_lossy() + ch.sigma * z;
                Reading::Valid(ch.quantize(noisy).clamp(ch.min, ch.max))
            };
            (v, reading)
        })
        .collect()
}
