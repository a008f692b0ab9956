//! Toy insertion-score model: a table of logits keyed by the tokens on both
//! sides of a gap and the token to insert.
//!
//! Both modes score a gap as `total * pi[i] * q[i, v]`: a softmax over gaps of
//! a per-(left, right) logit times a per-gap softmax over tokens. Fixed-length
//! (DICE) mode is time independent with `total = K - |x_t|`. Variable-length
//! (DISE) mode adds a per-time-bucket token bias to the token logits and sets
//! `total = exp(lambda[bucket, |x_t|]) * gaps * tokens`, so all-zero
//! parameters give scores of exactly 1 and the total rate depends on the
//! state only through its length.

mod checkpoint;
mod optim;
mod train;

use std::fmt;

use thiserror::Error;

use crate::dp::{DpError, RatioSource};
use crate::matrix::GapMatrix;
use crate::objective::{dice_from_ratios, dise_from_ratios, loss_weight, LossBreakdown, LossMode, ObjectiveError};
use crate::process::NoiseSchedule;
use crate::seq::{Sequence, Token};

pub use checkpoint::{load, load_for_vocab, save, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Optimizer, OptimizerKind, OptimizerState};
pub use train::{train, validate, LrSchedule, StepMetrics, TrainConfig, TrainState};

pub const DEFAULT_TIME_BUCKETS: usize = 16;
pub const DEFAULT_LEN_BUCKETS: usize = 64;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("sequence has {len} tokens after the marker but K is {k}")]
    LengthExceedsK { len: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// Source of insertion-score matrices for a state and time. Implemented by
/// the toy model and by the exact oracle.
pub trait InsertionScorer: Sync {
    /// Number of ids including the begin marker.
    fn vocab_size(&self) -> usize;

    /// `|x_t| x (vocab_size - 1)` matrix of nonnegative scores.
    fn score_matrix(&self, x_t: &Sequence, t: f64) -> Result<GapMatrix<f64>, crate::Error>;
}

/// Hyperparameters that fix the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScorerShape {
    pub mode: LossMode,
    /// Ids including the begin marker.
    pub vocab_size: usize,
    /// Target length (tokens after the marker) in fixed-length mode, else 0.
    pub k: usize,
    pub time_buckets: usize,
    pub len_buckets: usize,
}

impl ScorerShape {
    pub fn dise(vocab_size: usize) -> Self {
        ScorerShape {
            mode: LossMode::Dise,
            vocab_size,
            k: 0,
            time_buckets: DEFAULT_TIME_BUCKETS,
            len_buckets: DEFAULT_LEN_BUCKETS,
        }
    }

    pub fn dice(vocab_size: usize, k: usize) -> Self {
        ScorerShape {
            mode: LossMode::Dice,
            vocab_size,
            k,
            time_buckets: 0,
            len_buckets: 0,
        }
    }

    fn cols(&self) -> usize {
        self.vocab_size - 1
    }

    fn theta_len(&self) -> usize {
        self.vocab_size * self.vocab_size * self.cols()
    }

    fn gap_len(&self) -> usize {
        self.vocab_size * self.vocab_size
    }

    fn time_len(&self) -> usize {
        match self.mode {
            LossMode::Dise => self.time_buckets * self.cols(),
            LossMode::Dice => 0,
        }
    }

    fn len_len(&self) -> usize {
        match self.mode {
            LossMode::Dise => self.time_buckets * self.len_buckets,
            LossMode::Dice => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.theta_len() + self.gap_len() + self.time_len() + self.len_len()
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.vocab_size < 2 {
            return Err(ScorerError::ShapeMismatch("vocabulary needs at least one insertable token".into()));
        }
        if self.mode == LossMode::Dise && (self.time_buckets == 0 || self.len_buckets == 0) {
            return Err(ScorerError::ShapeMismatch("variable-length mode needs time and length buckets".into()));
        }
        Ok(())
    }

    #[inline]
    fn theta_at(&self, left: usize, right: usize, col: usize) -> usize {
        (left * self.vocab_size + right) * self.cols() + col
    }

    #[inline]
    fn gap_at(&self, left: usize, right: usize) -> usize {
        self.theta_len() + left * self.vocab_size + right
    }

    #[inline]
    fn time_at(&self, bucket: usize, col: usize) -> usize {
        self.theta_len() + self.gap_len() + bucket * self.cols() + col
    }

    #[inline]
    fn len_at(&self, bucket: usize, len_bucket: usize) -> usize {
        self.theta_len() + self.gap_len() + self.time_len() + bucket * self.len_buckets + len_bucket
    }

    pub fn time_bucket(&self, t: f64) -> usize {
        ((t * self.time_buckets as f64) as usize).min(self.time_buckets - 1)
    }

    pub fn len_bucket(&self, body_len: usize) -> usize {
        body_len.min(self.len_buckets - 1)
    }
}

/// Flat parameter vector with its layout. Gradients share the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    pub shape: ScorerShape,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Scores together with the mode that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct InsertionScoreMatrix {
    pub values: GapMatrix<f64>,
    pub mode: LossMode,
}

/// Left and right context ids of every gap. The right id of the last gap is 0,
/// which is free because the begin marker never sits to the right of a gap.
fn gap_keys(x_t: &Sequence) -> impl Iterator<Item = (usize, usize)> + '_ {
    let tok = x_t.tokens();
    (0..tok.len()).map(move |i| {
        let right = tok.get(i + 1).map_or(0, |t: &Token| t.id() as usize);
        (tok[i].id() as usize, right)
    })
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

/// Intermediate values of a forward pass.
struct Forward {
    scores: GapMatrix<f64>,
    total: f64,
    /// softmax over gaps
    pi: Vec<f64>,
    /// per-gap softmax over tokens
    q: GapMatrix<f64>,
}

impl ScorerParams {
    pub fn zeros(shape: ScorerShape) -> Result<Self, ScorerError> {
        shape.validate()?;
        Ok(ScorerParams {
            shape,
            values: vec![0.0; shape.param_count()],
        })
    }

    /// Starting point for training: zeros, except that in variable-length
    /// mode the length bias starts at `-ln(tokens)`, one expected insertion per
    /// gap. States never seen in training then keep a moderate rate instead of
    /// `tokens` insertions per gap.
    pub fn init(shape: ScorerShape) -> Result<Self, ScorerError> {
        let mut p = Self::zeros(shape)?;
        if shape.mode == LossMode::Dise {
            let start = shape.len_at(0, 0);
            let bias = -(shape.cols() as f64).ln();
            p.values[start..start + shape.len_len()].iter_mut().for_each(|v| *v = bias);
        }
        Ok(p)
    }

    pub fn mode(&self) -> LossMode {
        self.shape.mode
    }

    fn check_input(&self, x_t: &Sequence) -> Result<(), ScorerError> {
        if let Err(e) = x_t.check_vocab(self.shape.vocab_size) {
            return Err(ScorerError::ShapeMismatch(e.to_string()));
        }
        if self.shape.mode == LossMode::Dice && x_t.body_len() > self.shape.k {
            return Err(ScorerError::LengthExceedsK {
                len: x_t.body_len(),
                k: self.shape.k,
            });
        }
        Ok(())
    }

    fn forward(&self, x_t: &Sequence, t: f64) -> Forward {
        let sh = &self.shape;
        let p = &self.values;
        let (total, bucket) = match sh.mode {
            LossMode::Dice => ((sh.k - x_t.body_len()) as f64, None),
            LossMode::Dise => {
                let b = sh.time_bucket(t);
                let lambda = p[sh.len_at(b, sh.len_bucket(x_t.body_len()))];
                (lambda.exp() * (x_t.gaps() * sh.cols()) as f64, Some(b))
            }
        };
        let mut pi: Vec<f64> = gap_keys(x_t).map(|(l, r)| p[sh.gap_at(l, r)]).collect();
        softmax_in_place(&mut pi);
        let mut q = GapMatrix::zeros(x_t.gaps(), sh.cols());
        for (i, (l, r)) in gap_keys(x_t).enumerate() {
            let row = q.row_mut(i);
            for (c, x) in row.iter_mut().enumerate() {
                *x = p[sh.theta_at(l, r, c)] + bucket.map_or(0.0, |b| p[sh.time_at(b, c)]);
            }
            softmax_in_place(row);
        }
        let mut scores = q.clone();
        for i in 0..scores.rows() {
            let f = total * pi[i];
            scores.row_mut(i).iter_mut().for_each(|s| *s *= f);
        }
        Forward { scores, total, pi, q }
    }

    /// Scores for `x_t`. Variable-length mode needs `t`; fixed-length mode ignores it.
    pub fn score(&self, x_t: &Sequence, t: Option<f64>) -> Result<InsertionScoreMatrix, ScorerError> {
        self.check_input(x_t)?;
        let values = match (self.shape.mode, t) {
            (LossMode::Dise, Some(t)) => self.forward(x_t, t).scores,
            (LossMode::Dise, None) => {
                return Err(ScorerError::ModeMismatch("variable-length scores depend on t".into()));
            }
            (LossMode::Dice, _) => self.forward(x_t, 0.0).scores,
        };
        Ok(InsertionScoreMatrix {
            values,
            mode: self.shape.mode,
        })
    }

    /// Loss of the model's own mode and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x_t: &Sequence,
        x_0: &Sequence,
        t: f64,
        schedule: &dyn NoiseSchedule,
        dp: &dyn RatioSource,
    ) -> Result<(LossBreakdown, Gradient), ScorerError> {
        self.check_input(x_t)?;
        let weight = loss_weight(t, schedule)?;
        let target = dp.n_ratios(x_t, x_0).map_err(ObjectiveError::from)?;
        let r = &target.ratios;
        let sh = &self.shape;
        let mut grad = vec![0.0; self.values.len()];
        let f = self.forward(x_t, t);
        let rho: Vec<f64> = (0..r.rows()).map(|i| r.row(i).iter().sum()).collect();
        let deleted: f64 = rho.iter().sum();
        let loss = match sh.mode {
            LossMode::Dise => {
                let loss = dise_from_ratios(&f.scores, r, weight)?;
                let b = sh.time_bucket(t);
                // the total only moves lambda: d/dlambda = w (total - sum r)
                grad[sh.len_at(b, sh.len_bucket(x_t.body_len()))] += weight * (f.total - deleted);
                loss
            }
            LossMode::Dice => dice_from_ratios(&f.scores, r, weight, target.deleted as f64)?,
        };
        // with the total held fixed both losses reduce to w * (-sum r log s)
        let bucket = (sh.mode == LossMode::Dise).then(|| sh.time_bucket(t));
        for (i, (l, rt)) in gap_keys(x_t).enumerate() {
            grad[sh.gap_at(l, rt)] -= weight * (rho[i] - deleted * f.pi[i]);
            for c in 0..sh.cols() {
                let g = -weight * (r[(i, c)] - rho[i] * f.q[(i, c)]);
                grad[sh.theta_at(l, rt, c)] += g;
                if let Some(b) = bucket {
                    grad[sh.time_at(b, c)] += g;
                }
            }
        }
        Ok((loss, Gradient { values: grad }))
    }
}

impl InsertionScorer for ScorerParams {
    fn vocab_size(&self) -> usize {
        self.shape.vocab_size
    }

    fn score_matrix(&self, x_t: &Sequence, t: f64) -> Result<GapMatrix<f64>, crate::Error> {
        Ok(self.score(x_t, Some(t))?.values)
    }
}

impl fmt::Display for ScorerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            LossMode::Dise => write!(
                f,
                "dise(vocab={}, time_buckets={}, len_buckets={})",
                self.vocab_size, self.time_buckets, self.len_buckets
            ),
            LossMode::Dice => write!(f, "dice(vocab={}, K={})", self.vocab_size, self.k),
        }
    }
}
