//! Minibatch training loop.
//!
//! Step `k` uses corpus positions `k*batch .. (k+1)*batch` of an endless
//! stream made of per-epoch shuffles. Every position owns its rng stream, so
//! a run can be resumed from a checkpoint and the per-sequence work can run
//! on any number of threads: results are gathered in batch order and summed
//! sequentially. The step budget is global: a resumed run continues toward
//! the same total, and the learning-rate schedule is a function of the
//! global step only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Checkpoint, Optimizer, OptimizerKind, ScorerError};
use crate::dp::RatioSource;
use crate::objective::{draw_time, LossMode, T_MIN};
use crate::process::{forward_sample, NoiseSchedule};
use crate::seq::Corpus;

const SHUFFLE_STREAM: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over the run.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(format!("unknown lr schedule {other:?} (expected constant or cosine)")),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total number of steps counted from the untrained model; when `None`,
    /// `epochs` passes over the corpus.
    pub steps: Option<u64>,
    pub epochs: u64,
    pub batch: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub t_min: f64,
    /// Stop after this global step without changing the schedule.
    pub halt_at: Option<u64>,
    /// Spread the sequences of a batch across threads.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: None,
            epochs: 1,
            batch: 16,
            lr: 0.05,
            lr_schedule: LrSchedule::Cosine,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            t_min: T_MIN,
            halt_at: None,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, corpus_len: usize) -> u64 {
        self.steps
            .unwrap_or_else(|| self.epochs * (corpus_len as u64).div_ceil(self.batch.max(1) as u64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    /// 1-based global step.
    pub step: u64,
    /// Mean per-sequence loss over the batch.
    pub loss: f64,
    pub wall_ms: f64,
}

/// Alias kept for callers that think of the training output as a state.
pub type TrainState = Checkpoint;

/// Checks the corpus against the model shape. Fixed-length training needs every
/// sequence to have exactly `K` tokens after the marker.
pub fn validate(checkpoint: &Checkpoint, corpus: &Corpus, config: &TrainConfig) -> Result<(), ScorerError> {
    let shape = &checkpoint.params.shape;
    if corpus.is_empty() {
        return Err(ScorerError::Config("corpus is empty".into()));
    }
    if config.batch == 0 {
        return Err(ScorerError::Config("batch must be at least 1".into()));
    }
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(ScorerError::Config(format!("learning rate {} is not a finite nonnegative number", config.lr)));
    }
    if !(config.t_min > 0.0 && config.t_min < 1.0) {
        return Err(ScorerError::Config(format!("t_min {} must lie in (0, 1)", config.t_min)));
    }
    for (seq, line) in corpus.sequences.iter().zip(&corpus.line_numbers) {
        if seq.check_vocab(shape.vocab_size).is_err() {
            return Err(ScorerError::Config(format!(
                "line {line} uses a token outside the model vocabulary of {} ids",
                shape.vocab_size
            )));
        }
        if shape.mode == LossMode::Dice && seq.body_len() != shape.k {
            return Err(ScorerError::Config(format!(
                "line {line} has {} tokens but fixed-length training needs K = {}",
                seq.body_len(),
                shape.k
            )));
        }
    }
    Ok(())
}

struct Order {
    seed: u64,
    len: usize,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl Order {
    fn index(&mut self, pos: u64) -> usize {
        let epoch = pos / self.len as u64;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(SHUFFLE_STREAM | epoch);
            self.perm = (0..self.len).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.perm[(pos % self.len as u64) as usize]
    }
}

/// Runs the optimizer from `checkpoint.steps` up to `config.total_steps`.
pub fn train(
    checkpoint: Checkpoint,
    corpus: &Corpus,
    config: &TrainConfig,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Checkpoint, ScorerError> {
    validate(&checkpoint, corpus, config)?;
    let Checkpoint {
        mut params,
        steps: start,
        optimizer,
    } = checkpoint;
    let mut opt = Optimizer::resume(config.optimizer, config.lr, params.values.len(), optimizer);
    let mut order = Order {
        seed: config.seed,
        len: corpus.len(),
        epoch: None,
        perm: Vec::new(),
    };
    let total = config.total_steps(corpus.len());
    let batch = config.batch as u64;
    let mut grad = vec![0.0; params.values.len()];
    let end = config.halt_at.map_or(total, |h| h.min(total));
    for step in start..end {
        let began = Instant::now();
        let jobs: Vec<(u64, usize)> = (0..batch)
            .map(|k| {
                let pos = step * batch + k;
                (pos, order.index(pos))
            })
            .collect();
        let one = |&(pos, idx): &(u64, usize)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(pos);
            let x_0 = &corpus.sequences[idx];
            let t = draw_time(&mut rng, config.t_min);
            let x_t = forward_sample(x_0, 0.0, t, schedule, &mut rng)
                .map_err(|e| ScorerError::Config(e.to_string()))?
                .x_t;
            params.loss_and_grad(&x_t, x_0, t, schedule, dp)
        };
        let results: Vec<_> = if config.parallel {
            jobs.par_iter().map(one).collect()
        } else {
            jobs.iter().map(one).collect()
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l.total;
            for (acc, x) in grad.iter_mut().zip(&g.values) {
                *acc += x;
            }
        }
        let scale = 1.0 / batch as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        opt.lr = config.lr * config.lr_schedule.factor(step, total);
        opt.step(&mut params.values, &grad);
        on_step(&StepMetrics {
            step: step + 1,
            loss: loss * scale,
            wall_ms: began.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(Checkpoint {
        params,
        steps: start.max(end),
        optimizer: Some(opt.state),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::DpEngine;
    use crate::process::LogLinear;
    use crate::scorer::{ScorerParams, ScorerShape};
    use crate::seq::TokenizeMode;

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::from_lines(lines.iter().copied(), TokenizeMode::Char, None, None).unwrap()
    }

    fn run(c: &Corpus, shape: ScorerShape, config: &TrainConfig) -> (Checkpoint, Vec<StepMetrics>) {
        let dp = DpEngine::new(shape.vocab_size);
        let mut m = Vec::new();
        let ck = Checkpoint::new(ScorerParams::init(shape).unwrap());
        let out = train(ck, c, config, &LogLinear, &dp, |s| m.push(s.clone())).unwrap();
        (out, m)
    }

    #[test]
    fn zero_lr_keeps_params() {
        let c = corpus(&["abc", "ba"]);
        let shape = ScorerShape::dise(c.vocab.len());
        let cfg = TrainConfig {
            steps: Some(5),
            lr: 0.0,
            ..TrainConfig::default()
        };
        let (out, m) = run(&c, shape, &cfg);
        assert_eq!(out.params, ScorerParams::init(shape).unwrap());
        assert_eq!(m.len(), 5);
        assert_eq!(out.steps, 5);
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let c = corpus(&["abcab", "bca", "cc", "abab"]);
        let shape = ScorerShape::dise(c.vocab.len());
        let cfg = TrainConfig {
            steps: Some(20),
            batch: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ma) = run(&c, shape, &cfg);
        let (b, mb) = run(&c, shape, &cfg);
        let (p, mp) = run(&c, shape, &TrainConfig { parallel: true, ..cfg.clone() });
        assert_eq!(a, b);
        assert_eq!(a, p);
        let losses = |m: &[StepMetrics]| m.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(losses(&ma), losses(&mb));
        assert_eq!(losses(&ma), losses(&mp));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let c = corpus(&["abcab", "bca", "cc"]);
        let shape = ScorerShape::dise(c.vocab.len());
        let dp = DpEngine::new(shape.vocab_size);
        let cfg = TrainConfig {
            steps: Some(10),
            batch: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let (full, _) = run(&c, shape, &cfg);
        for k in [0, 3, 5, 9, 10] {
            let ck = Checkpoint::new(ScorerParams::init(shape).unwrap());
            let halted = TrainConfig {
                halt_at: Some(k),
                ..cfg.clone()
            };
            let head = train(ck, &c, &halted, &LogLinear, &dp, |_| {}).unwrap();
            assert_eq!(head.steps, k);
            let head = Checkpoint::from_bytes(&head.to_bytes()).unwrap();
            let mut seen = 0;
            let end = train(head, &c, &cfg, &LogLinear, &dp, |_| seen += 1).unwrap();
            assert_eq!(seen, 10 - k);
            assert_eq!(end, full, "resumed after {k} steps");
        }
    }

    #[test]
    fn cosine_schedule_ends_at_zero() {
        assert_eq!(LrSchedule::Cosine.factor(0, 8), 1.0);
        assert!((LrSchedule::Cosine.factor(4, 8) - 0.5).abs() < 1e-15);
        assert!(LrSchedule::Cosine.factor(8, 8).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.factor(7, 8), 1.0);
    }

    #[test]
    fn disjoint_corpora_differ() {
        let a = corpus(&["ab", "ab"]);
        let b = Corpus::from_lines(["cd", "dc"], TokenizeMode::Char, None, Some(a.vocab.clone()));
        assert!(b.is_err());
        let vocab = crate::seq::Vocab::from_chars("abcd").unwrap();
        let a = Corpus::from_lines(["ab", "ab"], TokenizeMode::Char, None, Some(vocab.clone())).unwrap();
        let b = Corpus::from_lines(["cd", "dc"], TokenizeMode::Char, None, Some(vocab)).unwrap();
        let shape = ScorerShape::dise(5);
        let cfg = TrainConfig {
            steps: Some(5),
            ..TrainConfig::default()
        };
        assert_ne!(run(&a, shape, &cfg).0.params, run(&b, shape, &cfg).0.params);
    }

    #[test]
    fn ragged_fixed_length_corpus_names_line() {
        let c = Corpus::from_lines(["ab", "", "abc"], TokenizeMode::Char, None, None).unwrap();
        let ck = Checkpoint::new(ScorerParams::zeros(ScorerShape::dice(c.vocab.len(), 2)).unwrap());
        let err = validate(&ck, &c, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn dice_single_sequence_converges() {
        // distinct tokens: the (left, right) table can realize the ratios
        let c = corpus(&["abcdef"; 8]);
        let shape = ScorerShape::dice(c.vocab.len(), 6);
        let cfg = TrainConfig {
            steps: Some(2000),
            batch: 1,
            lr: 0.1,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, m) = run(&c, shape, &cfg);
        let first = m[0].loss;
        let last: f64 = m[m.len() - 100..].iter().map(|s| s.loss).sum::<f64>() / 100.0;
        assert!(last < 0.1 * first, "first {first}, final mean {last}");
    }
}
