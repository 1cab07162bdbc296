//! Positional PID with integral clamping.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Gains and limits of a PID loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
    pub output_min: T,
    pub output_max: T,
    /// Bound on the magnitude of the integrated error.
    pub windup_limit: T,
}

impl<T: Scalar> PidGains<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.output_min < self.output_max) {
            return Err("output_min must be below output_max".into());
        }
        if !(self.windup_limit > T::zero()) {
            return Err("windup_limit must be positive".into());
        }
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err("PID gains must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState<T> {
    pub gains: PidGains<T>,
    pub integral: T,
    pub previous_error: Option<T>,
}

impl<T: Scalar> PidState<T> {
    pub fn new(gains: PidGains<T>) -> Self {
        PidState { gains, integral: T::zero(), previous_error: None }
    }

    pub fn reset(&mut self) {
        self.integral = T::zero();
        self.previous_error = None;
    }
}

/// One controller update. Returns the clamped output and the next state.
///
/// The derivative term is zero on the first update.
pub fn pid_update<T: Scalar>(pid: &PidState<T>, error: T, dt: T) -> (T, PidState<T>) {
    debug_assert!(dt > T::zero());
    let g = &pid.gains;
    let integral = (pid.integral + error * dt).clamp_to(-g.windup_limit, g.windup_limit);
    let derivative = pid.previous_error.map_or(T::zero(), |prev| (error - prev) / dt);
    let output = (g.kp * error + g.ki * integral + g.kd * derivative).clamp_to(g.output_min, g.output_max);
    (output, PidState { gains: *g, integral, previous_error: Some(error) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(kp: f64, ki: f64, kd: f64) -> PidGains<f64> {
        PidGains { kp, ki, kd, output_min: -1e9, output_max: 1e9, windup_limit: 1e9 }
    }

    #[test]
    fn zero_error() {
        let (out, next) = pid_update(&PidState::new(gains(0.4, 0.01, 0.05)), 0.0, 10.0);
        assert_eq!(out, 0.0);
        assert_eq!(next.integral, 0.0);
        assert_eq!(next.previous_error, Some(0.0));
    }

    #[test]
    fn proportional_only() {
        let (out, _) = pid_update(&PidState::new(gains(1.0, 0.0, 0.0)), 2.5, 1.0);
        assert_eq!(out, 2.5);
    }

    #[test]
    fn integral_recurrence() {
        // hand-evaluated: integral after n updates at error 1, dt 1 is n; output 0.1 n
        let mut pid = PidState::new(gains(0.0, 0.1, 0.0));
        let mut outs = vec![];
        for _ in 0..3 {
            let (out, next) = pid_update(&pid, 1.0, 1.0);
            outs.push(out);
            pid = next;
        }
        let expected = [0.1, 0.2, 0.3];
        for (o, e) in outs.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12, "{outs:?}");
        }
    }

    #[test]
    fn derivative_uses_previous_error() {
        let pid = PidState::new(gains(0.0, 0.0, 2.0));
        let (first, pid) = pid_update(&pid, 3.0, 0.5);
        assert_eq!(first, 0.0);
        let (second, _) = pid_update(&pid, 4.0, 0.5);
        assert_eq!(second, 2.0 * (4.0 - 3.0) / 0.5);
    }

    #[test]
    fn clamps_output_and_integral() {
        let g = PidGains { kp: 0.5, ki: 1.0, kd: 0.0, output_min: -1.0, output_max: 1.0, windup_limit: 2.0 };
        let (out, next) = pid_update(&PidState::new(g), 3.0, 10.0);
        assert_eq!(out, 1.0);
        assert_eq!(next.integral, 2.0);
        let (out, next) = pid_update(&next, -30.0, 10.0);
        assert_eq!(out, -1.0);
        assert_eq!(next.integral, -2.0);
    }

    #[test]
    fn works_in_f32() {
        let g = PidGains { kp: 1.0f32, ki: 0.0, kd: 0.0, output_min: -1.0, output_max: 1.0, windup_limit: 1.0 };
        assert_eq!(pid_update(&PidState::new(g), 0.25f32, 1.0).0, 0.25);
    }
}
