//! DISE and DICE training objectives.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::dp::{DpError, RatioSource};
use crate::matrix::GapMatrix;
use crate::process::{forward_sample, NoiseSchedule, ProcessError};
use crate::scorer::InsertionScorer;
use crate::seq::Sequence;

/// Floor for training times; the weight behaves like `1/t` near zero.
pub const T_MIN: f64 = 1e-3;

/// Tolerance on the score sum in fixed-length mode.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("loss weight undefined at t={0}")]
    InvalidTime(f64),
    #[error("score at gap {gap}, column {col} is {value} but its target is positive")]
    NonPositiveScore { gap: usize, col: usize, value: f64 },
    #[error("scores sum to {sum}, expected {expected}")]
    NormalizationViolation { sum: f64, expected: f64 },
    #[error("score matrix is {got:?}, expected {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("x_t is not a subsequence of x_0")]
    NotASubsequence,
    #[error(transparent)]
    Dp(DpError),
    #[error(transparent)]
    Process(#[from] ProcessError),
}

impl From<DpError> for ObjectiveError {
    fn from(e: DpError) -> Self {
        match e {
            DpError::NotASubsequence => ObjectiveError::NotASubsequence,
            e => ObjectiveError::Dp(e),
        }
    }
}

/// Variable-length (`Dise`) or fixed-length normalized (`Dice`) training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Dise,
    Dice,
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dise" | "variable" => Ok(LossMode::Dise),
            "dice" | "fixed" => Ok(LossMode::Dice),
            other => Err(format!("unknown loss mode {other:?} (expected dise or dice)")),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Dise => "dise",
            LossMode::Dice => "dice",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted contribution of each gap.
    pub per_position: Vec<f64>,
    pub weight: f64,
}

impl LossBreakdown {
    fn from_rows(per_position: Vec<f64>, weight: f64) -> Self {
        let total = weight * per_position.iter().sum::<f64>();
        LossBreakdown {
            total,
            per_position,
            weight,
        }
    }
}

/// `sigma(t) e^{-sigma_bar(t)} / (1 - e^{-sigma_bar(t)})`.
pub fn loss_weight(t: f64, schedule: &dyn NoiseSchedule) -> Result<f64, ObjectiveError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(ObjectiveError::InvalidTime(t));
    }
    Ok(schedule.loss_weight(t))
}

/// `a (ln a - 1)` with `K(0) = 0`.
#[inline]
pub fn k_term(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a.ln() - 1.0)
    }
}

/// `s - r ln s + K(r)`; equals `s` when `r == 0`.
#[inline]
pub fn dise_bracket(s: f64, r: f64) -> f64 {
    if r == 0.0 {
        s
    } else {
        s - r * s.ln() + k_term(r)
    }
}

fn check_shape(scores: &GapMatrix<f64>, ratios: &GapMatrix<f64>) -> Result<(), ObjectiveError> {
    if scores.shape() != ratios.shape() {
        return Err(ObjectiveError::ShapeMismatch {
            expected: ratios.shape(),
            got: scores.shape(),
        });
    }
    Ok(())
}

/// DISE against precomputed targets.
pub fn dise_from_ratios(
    scores: &GapMatrix<f64>,
    ratios: &GapMatrix<f64>,
    weight: f64,
) -> Result<LossBreakdown, ObjectiveError> {
    check_shape(scores, ratios)?;
    let mut rows = Vec::with_capacity(scores.rows());
    for i in 0..scores.rows() {
        let mut acc = 0.0;
        for (c, (&s, &r)) in scores.row(i).iter().zip(ratios.row(i)).enumerate() {
            if r > 0.0 && s <= 0.0 {
                return Err(ObjectiveError::NonPositiveScore { gap: i, col: c, value: s });
            }
            acc += dise_bracket(s, r);
        }
        rows.push(acc);
    }
    Ok(LossBreakdown::from_rows(rows, weight))
}

/// DICE against precomputed targets; `expected_sum` is `K - |x_t|`.
pub fn dice_from_ratios(
    scores: &GapMatrix<f64>,
    ratios: &GapMatrix<f64>,
    weight: f64,
    expected_sum: f64,
) -> Result<LossBreakdown, ObjectiveError> {
    check_shape(scores, ratios)?;
    let sum = scores.sum();
    if (sum - expected_sum).abs() > NORMALIZATION_TOL * expected_sum.max(1.0) {
        return Err(ObjectiveError::NormalizationViolation {
            sum,
            expected: expected_sum,
        });
    }
    let mut rows = Vec::with_capacity(scores.rows());
    for i in 0..scores.rows() {
        let mut acc = 0.0;
        for (c, (&s, &r)) in scores.row(i).iter().zip(ratios.row(i)).enumerate() {
            if r == 0.0 {
                continue;
            }
            if s <= 0.0 {
                return Err(ObjectiveError::NonPositiveScore { gap: i, col: c, value: s });
            }
            acc += r * (r.ln() - s.ln());
        }
        rows.push(acc);
    }
    Ok(LossBreakdown::from_rows(rows, weight))
}

pub fn dise_loss(
    scores: &GapMatrix<f64>,
    x_t: &Sequence,
    x_0: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
) -> Result<LossBreakdown, ObjectiveError> {
    let weight = loss_weight(t, schedule)?;
    let r = dp.n_ratios(x_t, x_0)?;
    dise_from_ratios(scores, &r.ratios, weight)
}

pub fn dice_loss(
    scores: &GapMatrix<f64>,
    x_t: &Sequence,
    x_0: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
) -> Result<LossBreakdown, ObjectiveError> {
    let weight = loss_weight(t, schedule)?;
    let r = dp.n_ratios(x_t, x_0)?;
    dice_from_ratios(scores, &r.ratios, weight, r.deleted as f64)
}

pub fn loss(
    mode: LossMode,
    scores: &GapMatrix<f64>,
    x_t: &Sequence,
    x_0: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
) -> Result<LossBreakdown, ObjectiveError> {
    match mode {
        LossMode::Dise => dise_loss(scores, x_t, x_0, t, schedule, dp),
        LossMode::Dice => dice_loss(scores, x_t, x_0, t, schedule, dp),
    }
}

/// One Monte-Carlo draw of the training objective.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTerm {
    pub t: f64,
    pub x_t: Sequence,
    pub loss: LossBreakdown,
}

/// `t ~ U(t_min, 1)`, then `x_t ~ p_t(. | x_0)`, then the chosen loss.
pub fn draw_time<R: Rng + ?Sized>(rng: &mut R, t_min: f64) -> f64 {
    t_min + (1.0 - t_min) * rng.random::<f64>()
}

pub fn sample_training_term<R: Rng + ?Sized>(
    x_0: &Sequence,
    schedule: &dyn NoiseSchedule,
    rng: &mut R,
    mode: LossMode,
    scorer: &dyn InsertionScorer,
    dp: &dyn RatioSource,
    t_min: f64,
) -> Result<TrainingTerm, crate::Error> {
    let t = draw_time(rng, t_min);
    let x_t = forward_sample(x_0, 0.0, t, schedule, rng)?.x_t;
    let scores = scorer.score_matrix(&x_t, t)?;
    let loss = loss(mode, &scores, &x_t, x_0, t, schedule, dp)?;
    Ok(TrainingTerm { t, x_t, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{n_ratios, Domain, DpEngine};
    use crate::process::LogLinear;
    use proptest::prelude::*;

    fn seq(body: &[u32]) -> Sequence {
        Sequence::from_body(body).unwrap()
    }

    #[test]
    fn weights() {
        assert_eq!(loss_weight(0.5, &LogLinear).unwrap(), 2.0);
        assert_eq!(loss_weight(1.0, &LogLinear).unwrap(), 1.0);
        assert_eq!(loss_weight(0.25, &LogLinear).unwrap(), 4.0);
        assert_eq!(loss_weight(0.0, &LogLinear), Err(ObjectiveError::InvalidTime(0.0)));
    }

    #[test]
    fn zero_at_targets() {
        let dp = DpEngine::new(3);
        let (x_t, x_0) = (seq(&[1]), seq(&[2, 1, 1, 2]));
        let r = n_ratios(&x_t, &x_0, 3, Domain::Exact).unwrap().ratios;
        let l = dise_loss(&r, &x_t, &x_0, 0.4, &LogLinear, &dp).unwrap();
        assert!(l.total.abs() < 1e-12);
        let l = dice_loss(&r, &x_t, &x_0, 0.4, &LogLinear, &dp).unwrap();
        assert!(l.total.abs() < 1e-12);
    }

    #[test]
    fn scaled_targets() {
        let dp = DpEngine::new(3);
        let (x_t, x_0) = (seq(&[2]), seq(&[1, 2, 2]));
        let r = n_ratios(&x_t, &x_0, 3, Domain::Exact).unwrap().ratios;
        let c = 1.7;
        let l = dise_loss(&r.map(|&x| c * x), &x_t, &x_0, 0.5, &LogLinear, &dp).unwrap();
        let want = 2.0 * r.as_slice().iter().map(|&x| x * (c - 1.0 - c.ln())).sum::<f64>();
        assert!((l.total - want).abs() < 1e-12);
        assert!(l.total > 0.0);
        assert!((l.total - l.weight * l.per_position.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn dice_ignores_scores_when_nothing_deleted() {
        let dp = DpEngine::new(3);
        let x = seq(&[1, 2]);
        let zeros = GapMatrix::zeros(3, 2);
        assert_eq!(dice_loss(&zeros, &x, &x, 0.3, &LogLinear, &dp).unwrap().total, 0.0);
    }

    #[test]
    fn error_cases() {
        let dp = DpEngine::new(3);
        let (x_t, x_0) = (seq(&[]), seq(&[1]));
        let zeros = GapMatrix::zeros(1, 2);
        assert!(matches!(
            dise_loss(&zeros, &x_t, &x_0, 0.5, &LogLinear, &dp),
            Err(ObjectiveError::NonPositiveScore { gap: 0, col: 0, .. })
        ));
        let off = GapMatrix::filled(1, 2, 1.0);
        assert!(matches!(
            dice_loss(&off, &x_t, &x_0, 0.5, &LogLinear, &dp),
            Err(ObjectiveError::NormalizationViolation { .. })
        ));
        assert!(matches!(
            dise_loss(&off, &x_0, &x_t, 0.5, &LogLinear, &dp),
            Err(ObjectiveError::NotASubsequence)
        ));
        assert!(matches!(
            dise_loss(&GapMatrix::filled(2, 2, 1.0), &x_t, &x_0, 0.5, &LogLinear, &dp),
            Err(ObjectiveError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_ratio_entries_charge_the_score_in_dise_only() {
        let dp = DpEngine::new(3);
        let (x_t, x_0) = (seq(&[]), seq(&[1]));
        let s = GapMatrix::from_vec(1, 2, vec![1.0, 0.0]);
        let with_extra = GapMatrix::from_vec(1, 2, vec![1.0, 0.5]);
        let a = dise_loss(&s, &x_t, &x_0, 0.5, &LogLinear, &dp).unwrap().total;
        let b = dise_loss(&with_extra, &x_t, &x_0, 0.5, &LogLinear, &dp).unwrap().total;
        assert!((b - a - 2.0 * 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bracket_nonnegative_and_minimal_at_target(r in 1e-3f64..20.0, s in 1e-3f64..20.0) {
            let b = dise_bracket(s, r);
            prop_assert!(b >= -1e-12);
            prop_assert!(dise_bracket(r, r).abs() <= 1e-12 * r.max(1.0));
            // convexity along s: second difference is nonnegative
            let h = 1e-3 * s;
            let second = dise_bracket(s + h, r) - 2.0 * b + dise_bracket(s - h, r);
            prop_assert!(second >= -1e-9);
        }
    }
}
