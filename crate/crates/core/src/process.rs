//! Forward deletion process: schedules, closed-form transitions and sampling.

use std::fmt::Debug;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::dp::{DpError, RatioSource};
use crate::seq::Sequence;

/// Largest time used inside arithmetic; the log-linear schedule diverges at 1.
pub const T_MAX: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessError {
    #[error("invalid times s={s}, t={t}: need 0 <= s < t <= 1")]
    InvalidTimes { s: f64, t: f64 },
    #[error("invalid time t={0}")]
    InvalidTime(f64),
    #[error("x_t is not obtained from y by deleting exactly one token")]
    NotSingleDeletion,
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// Deletion intensity: `sigma(t)` and its integral `sigma_bar(t)`.
pub trait NoiseSchedule: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn sigma(&self, t: f64) -> f64;

    fn sigma_bar(&self, t: f64) -> f64;

    /// Probability that one token alive at `s` is still alive at `t`.
    fn survival(&self, s: f64, t: f64) -> f64 {
        (-(self.sigma_bar(t) - self.sigma_bar(s))).exp()
    }

    /// `1 - survival(s, t)`, without cancellation for short intervals.
    fn deletion(&self, s: f64, t: f64) -> f64 {
        -(-(self.sigma_bar(t) - self.sigma_bar(s))).exp_m1()
    }

    /// `sigma(t) e^{-sigma_bar(t)} / (1 - e^{-sigma_bar(t)})`, the objective
    /// prefactor and the reverse-rate multiplier.
    fn loss_weight(&self, t: f64) -> f64 {
        self.sigma(t) / self.sigma_bar(t).exp_m1()
    }
}

/// `sigma_bar(t) = -ln(1 - t)`, `sigma(t) = 1 / (1 - t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LogLinear;

impl NoiseSchedule for LogLinear {
    fn name(&self) -> &'static str {
        "loglinear"
    }

    fn sigma(&self, t: f64) -> f64 {
        1.0 / (1.0 - t.min(T_MAX))
    }

    fn sigma_bar(&self, t: f64) -> f64 {
        -(-t.min(T_MAX)).ln_1p()
    }

    fn survival(&self, s: f64, t: f64) -> f64 {
        (1.0 - t) / (1.0 - s)
    }

    fn deletion(&self, s: f64, t: f64) -> f64 {
        (t - s) / (1.0 - s)
    }

    fn loss_weight(&self, t: f64) -> f64 {
        1.0 / t
    }
}

/// Schedule choice by name, as used in config files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScheduleKind {
    #[default]
    LogLinear,
}

impl ScheduleKind {
    pub fn build(self) -> Box<dyn NoiseSchedule> {
        match self {
            ScheduleKind::LogLinear => Box::new(LogLinear),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loglinear" | "log-linear" | "log_linear" => Ok(ScheduleKind::LogLinear),
            other => Err(format!("unknown schedule {other:?} (expected loglinear)")),
        }
    }
}

fn check_times(s: f64, t: f64) -> Result<(), ProcessError> {
    if (0.0..1.0).contains(&s) && t > s && t <= 1.0 {
        Ok(())
    } else {
        Err(ProcessError::InvalidTimes { s, t })
    }
}

pub fn survival_prob(schedule: &dyn NoiseSchedule, s: f64, t: f64) -> Result<f64, ProcessError> {
    check_times(s, t)?;
    Ok(schedule.survival(s, t).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSampleResult {
    pub x_t: Sequence,
    /// Surviving positions of the input, strictly increasing, starting at 0.
    pub kept_indices: Vec<usize>,
}

/// Deletes each non-marker token of `x_s` independently with probability
/// `1 - survival(s, t)`. One uniform is drawn per token, in order.
pub fn forward_sample<R: Rng + ?Sized>(
    x_s: &Sequence,
    s: f64,
    t: f64,
    schedule: &dyn NoiseSchedule,
    rng: &mut R,
) -> Result<ForwardSampleResult, ProcessError> {
    let keep = survival_prob(schedule, s, t)?;
    let mut kept_indices = vec![0];
    for k in 1..x_s.len() {
        if rng.random::<f64>() < keep {
            kept_indices.push(k);
        }
    }
    Ok(ForwardSampleResult {
        x_t: x_s.select(&kept_indices),
        kept_indices,
    })
}

/// `p_{t|s}(x_t | x_s)`; lengths exclude the begin marker.
pub fn transition_prob(
    x_t: &Sequence,
    x_s: &Sequence,
    s: f64,
    t: f64,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
) -> Result<f64, ProcessError> {
    check_times(s, t)?;
    if x_t.len() > x_s.len() {
        return Ok(0.0);
    }
    let n = dp.count(x_t, x_s)?;
    if n == 0.0 {
        return Ok(0.0);
    }
    let keep = schedule.survival(s, t).clamp(0.0, 1.0);
    let drop = schedule.deletion(s, t).clamp(0.0, 1.0);
    let deleted = (x_s.body_len() - x_t.body_len()) as i32;
    Ok(drop.powi(deleted) * keep.powi(x_t.body_len() as i32) * n)
}

/// Rate of the forward jump `y -> x_t` that deletes one token: `sigma(t) N(x_t, y)`.
pub fn forward_rate(
    y: &Sequence,
    x_t: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
) -> Result<f64, ProcessError> {
    if !(0.0..1.0).contains(&t) {
        return Err(ProcessError::InvalidTime(t));
    }
    if y.len() != x_t.len() + 1 {
        return Err(ProcessError::NotSingleDeletion);
    }
    let n = dp.count(x_t, y)?;
    if n == 0.0 {
        return Err(ProcessError::NotSingleDeletion);
    }
    Ok(schedule.sigma(t) * n)
}
