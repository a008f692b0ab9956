//! Reverse insertion process: tau-leaping generation from `[BOS]` at `t = 1`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::GapMatrix;
use crate::process::NoiseSchedule;
use crate::scorer::InsertionScorer;
use crate::seq::{Sequence, Token};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("number of steps must be at least 1")]
    InvalidSteps,
    #[error("top_p must lie in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("step size {dt} invalid at t={t}")]
    InvalidStep { t: f64, dt: f64 },
    #[error("score matrix is {got:?}, expected {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("prompt has {len} tokens but the target length is {k}")]
    PromptTooLong { len: usize, k: usize },
    #[error("count must be at least 1")]
    EmptyBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GridKind {
    Uniform,
    #[default]
    Cosine,
}

impl FromStr for GridKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(GridKind::Uniform),
            "cosine" => Ok(GridKind::Cosine),
            other => Err(format!("unknown grid {other:?} (expected uniform or cosine)")),
        }
    }
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridKind::Uniform => "uniform",
            GridKind::Cosine => "cosine",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LengthMode {
    /// Stop inserting once the sequence holds `K` tokens after the marker.
    Fixed(usize),
    #[default]
    Variable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub grid: GridKind,
    pub top_p: f64,
    pub mode: LengthMode,
    pub seed: u64,
    /// Keep every intermediate state in the trace (otherwise only the first and last).
    pub keep_snapshots: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 128,
            grid: GridKind::Cosine,
            top_p: 1.0,
            mode: LengthMode::Variable,
            seed: 0,
            keep_snapshots: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.steps == 0 {
            return Err(SamplerError::InvalidSteps);
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SamplerError::InvalidTopP(self.top_p));
        }
        Ok(())
    }
}

/// Times `t_N = 1 > ... > t_0 = 0`, returned in that (descending) order.
pub fn timestep_grid(steps: usize, kind: GridKind) -> Result<Vec<f64>, SamplerError> {
    if steps == 0 {
        return Err(SamplerError::InvalidSteps);
    }
    let n = steps as f64;
    let mut out: Vec<f64> = (0..=steps)
        .rev()
        .map(|i| {
            let u = i as f64 / n;
            match kind {
                GridKind::Uniform => u,
                GridKind::Cosine => (FRAC_PI_2 * (1.0 - u)).cos(),
            }
        })
        .collect();
    out[0] = 1.0;
    out[steps] = 0.0;
    Ok(out)
}

/// Outcome of one reverse step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Gaps whose insertion mass exceeded 1 and was renormalized.
    pub clamped: usize,
    pub gaps: usize,
    /// Accepted insertions as `(gap, token, probability of that token)`.
    pub inserted: Vec<(usize, Token, f64)>,
    /// Proposals dropped by the fixed-length capacity rule.
    pub cancelled: usize,
}

/// Keeps the smallest set of most likely entries whose mass reaches `top_p`
/// of the total, rescaled so the total is unchanged. Ties keep lower columns.
pub fn nucleus_filter(probs: &mut [f64], top_p: f64) {
    if top_p >= 1.0 {
        return;
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut keep = order.len();
    for (k, &c) in order.iter().enumerate() {
        acc += probs[c];
        if acc >= top_p * total {
            keep = k + 1;
            break;
        }
    }
    for &c in &order[keep..] {
        probs[c] = 0.0;
    }
    let kept: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p *= total / kept);
}

/// Per-gap probabilities `w(t) s dt` after the clamp and nucleus rules.
/// Returns the matrix and the number of clamped gaps.
pub fn insertion_probs(
    scores: &GapMatrix<f64>,
    t: f64,
    dt: f64,
    schedule: &dyn NoiseSchedule,
    top_p: f64,
) -> (GapMatrix<f64>, usize) {
    let rate = schedule.loss_weight(t) * dt;
    let mut p = scores.map(|&s| (rate * s).max(0.0));
    let mut clamped = 0;
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let mass: f64 = row.iter().sum();
        if mass > 1.0 {
            row.iter_mut().for_each(|x| *x /= mass);
            clamped += 1;
        }
        nucleus_filter(row, top_p);
    }
    (p, clamped)
}

/// One tau-leaping step from `t` to `t - dt`. Each allowed gap draws one
/// uniform: below the insertion mass it picks a token by inverse CDF, else
/// nothing. `first_gap` masks gaps inside a prompt and `capacity` caps the
/// number of insertions (largest chosen-token probability wins, then lower gap).
/// With `fill` set and a capacity `c`, the per-gap draws are conditioned on
/// exactly `c` insertions in total whenever that event has positive mass.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_masked<R: Rng + ?Sized>(
    x_t: &Sequence,
    t: f64,
    dt: f64,
    scores: &GapMatrix<f64>,
    schedule: &dyn NoiseSchedule,
    top_p: f64,
    first_gap: usize,
    capacity: Option<usize>,
    fill: bool,
    rng: &mut R,
) -> Result<(Sequence, StepStats), SamplerError> {
    let expected = (x_t.gaps(), scores.cols());
    if scores.rows() != x_t.gaps() {
        return Err(SamplerError::ShapeMismatch {
            expected,
            got: scores.shape(),
        });
    }
    if !(dt > 0.0 && dt <= t + 1e-12) {
        return Err(SamplerError::InvalidStep { t, dt });
    }
    let (p, clamped) = insertion_probs(scores, t, dt, schedule, top_p);
    let mut stats = StepStats {
        clamped,
        gaps: x_t.gaps().saturating_sub(first_gap),
        ..StepStats::default()
    };
    let conditioned = match capacity {
        Some(c) if fill && c > 0 => exact_count_table(&p, first_gap, c),
        _ => None,
    };
    if let Some(q) = conditioned {
        let mut need = capacity.unwrap_or(0);
        for (k, i) in (first_gap..p.rows()).enumerate() {
            let u: f64 = rng.random();
            let mass: f64 = p.row(i).iter().sum::<f64>().min(1.0);
            let a = if need == 0 { 0.0 } else { mass * q[k + 1][need - 1] / q[k][need] };
            if u < a {
                if let Some(hit) = pick(p.row(i), u / a * mass) {
                    stats.inserted.push((i, hit.0, hit.1));
                    need -= 1;
                }
            }
        }
    } else {
        for i in first_gap..p.rows() {
            let u: f64 = rng.random();
            if let Some((v, q)) = pick(p.row(i), u) {
                stats.inserted.push((i, v, q));
            }
        }
    }
    if let Some(cap) = capacity {
        if stats.inserted.len() > cap {
            let mut ranked = stats.inserted.clone();
            ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            ranked.truncate(cap);
            ranked.sort_by_key(|e| e.0);
            stats.cancelled = stats.inserted.len() - cap;
            stats.inserted = ranked;
        }
    }
    let mut tokens = Vec::with_capacity(x_t.len() + stats.inserted.len());
    let mut next = stats.inserted.iter().peekable();
    for (i, &tok) in x_t.tokens().iter().enumerate() {
        tokens.push(tok);
        if let Some(&&(_, v, _)) = next.peek().filter(|e| e.0 == i) {
            tokens.push(v);
            next.next();
        }
    }
    let out = Sequence::new(tokens).expect("insertions never add the begin marker");
    Ok((out, stats))
}

fn pick(row: &[f64], u: f64) -> Option<(Token, f64)> {
    let mut acc = 0.0;
    for (c, &q) in row.iter().enumerate() {
        acc += q;
        if u < acc {
            return Some((Token::from_column(c), q));
        }
    }
    None
}

/// `q[k][r]`: probability that gaps `first_gap + k ..` produce exactly `r`
/// insertions. `None` when exactly `c` insertions is impossible.
fn exact_count_table(p: &GapMatrix<f64>, first_gap: usize, c: usize) -> Option<Vec<Vec<f64>>> {
    let open = p.rows().saturating_sub(first_gap);
    let mut q = vec![vec![0.0; c + 1]; open + 1];
    q[open][0] = 1.0;
    for k in (0..open).rev() {
        let mass: f64 = p.row(first_gap + k).iter().sum::<f64>().min(1.0);
        for r in 0..=c {
            let with = if r > 0 { mass * q[k + 1][r - 1] } else { 0.0 };
            q[k][r] = (1.0 - mass) * q[k + 1][r] + with;
        }
    }
    (q[0][c] > 0.0 && q[0][c].is_finite()).then_some(q)
}

/// [`reverse_step_masked`] with every gap open and no length cap.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &Sequence,
    t: f64,
    dt: f64,
    scores: &GapMatrix<f64>,
    schedule: &dyn NoiseSchedule,
    top_p: f64,
    rng: &mut R,
) -> Result<Sequence, SamplerError> {
    Ok(reverse_step_masked(x_t, t, dt, scores, schedule, top_p, 0, None, false, rng)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    /// `(time, state)` starting with the prompt at `t = 1`.
    pub snapshots: Vec<(f64, Sequence)>,
    pub final_seq: Sequence,
    pub clamped_gaps: usize,
    pub gap_steps: usize,
    pub seed: u64,
    pub index: u64,
}

/// rng of sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn generate_with_rng<R: Rng + ?Sized>(
    scorer: &dyn InsertionScorer,
    schedule: &dyn NoiseSchedule,
    config: &SamplerConfig,
    prompt: Option<&Sequence>,
    rng: &mut R,
) -> Result<GenerationTrace, crate::Error> {
    config.validate()?;
    let grid = timestep_grid(config.steps, config.grid)?;
    let start = prompt.cloned().unwrap_or_else(Sequence::bos_only);
    let first_gap = start.len() - 1;
    if let LengthMode::Fixed(k) = config.mode {
        if start.body_len() > k {
            return Err(SamplerError::PromptTooLong {
                len: start.body_len(),
                k,
            }
            .into());
        }
    }
    let mut x = start.clone();
    let mut snapshots = vec![(1.0, start)];
    let (mut clamped_gaps, mut gap_steps) = (0, 0);
    for w in grid.windows(2) {
        let (t, next_t) = (w[0], w[1]);
        let capacity = match config.mode {
            LengthMode::Fixed(k) => Some(k - x.body_len()),
            LengthMode::Variable => None,
        };
        if capacity != Some(0) {
            let scores = scorer.score_matrix(&x, t)?;
            let (nx, stats) =
                reverse_step_masked(&x, t, t - next_t, &scores, schedule, config.top_p, first_gap, capacity, next_t == 0.0, rng)?;
            clamped_gaps += stats.clamped;
            gap_steps += stats.gaps;
            x = nx;
        }
        if config.keep_snapshots {
            snapshots.push((next_t, x.clone()));
        }
    }
    if !config.keep_snapshots {
        snapshots.push((0.0, x.clone()));
    }
    Ok(GenerationTrace {
        snapshots,
        final_seq: x,
        clamped_gaps,
        gap_steps,
        seed: config.seed,
        index: 0,
    })
}

/// Walks the grid from `t = 1` to `0`, scoring the current state and taking a
/// reverse step at each grid point. Uses the rng of sample 0.
pub fn generate(
    scorer: &dyn InsertionScorer,
    schedule: &dyn NoiseSchedule,
    config: &SamplerConfig,
    prompt: Option<&Sequence>,
) -> Result<GenerationTrace, crate::Error> {
    generate_with_rng(scorer, schedule, config, prompt, &mut sample_rng(config.seed, 0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthSummary {
    pub count: usize,
    pub mean_length: f64,
    /// `(length, fraction of samples with final length <= length)`, lengths
    /// counted without the marker.
    pub cdf: Vec<(usize, f64)>,
    pub clamp_rate: f64,
}

impl LengthSummary {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let mut cdf: Vec<(usize, f64)> = Vec::new();
        for (k, &l) in sorted.iter().enumerate() {
            let frac = (k + 1) as f64 / n as f64;
            match cdf.last_mut() {
                Some(last) if last.0 == l => last.1 = frac,
                _ => cdf.push((l, frac)),
            }
        }
        LengthSummary {
            count: n,
            mean_length: if n == 0 { 0.0 } else { sorted.iter().sum::<usize>() as f64 / n as f64 },
            cdf,
            clamp_rate: 0.0,
        }
    }

    /// Empirical CDF at `len`.
    pub fn cdf_at(&self, len: usize) -> f64 {
        self.cdf.iter().take_while(|e| e.0 <= len).last().map_or(0.0, |e| e.1)
    }
}

/// Largest gap between two empirical length CDFs.
pub fn kolmogorov_distance(a: &[usize], b: &[usize]) -> f64 {
    let (sa, sb) = (LengthSummary::from_lengths(a), LengthSummary::from_lengths(b));
    let max = a.iter().chain(b).copied().max().unwrap_or(0);
    (0..=max)
        .map(|l| (sa.cdf_at(l) - sb.cdf_at(l)).abs())
        .fold(0.0, f64::max)
}

/// `count` independent samples; sample `k` uses rng stream `k`, so the output
/// does not depend on how samples are spread over threads.
pub fn batch_generate(
    scorer: &dyn InsertionScorer,
    schedule: &dyn NoiseSchedule,
    config: &SamplerConfig,
    prompt: Option<&Sequence>,
    count: usize,
    parallel: bool,
) -> Result<(Vec<GenerationTrace>, LengthSummary), crate::Error> {
    if count == 0 {
        return Err(SamplerError::EmptyBatch.into());
    }
    let one = |k: usize| {
        let mut rng = sample_rng(config.seed, k as u64);
        generate_with_rng(scorer, schedule, config, prompt, &mut rng).map(|mut tr| {
            tr.index = k as u64;
            tr
        })
    };
    let traces: Vec<GenerationTrace> = if parallel {
        (0..count).into_par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        (0..count).map(one).collect::<Result<_, _>>()?
    };
    let lengths: Vec<usize> = traces.iter().map(|t| t.final_seq.body_len()).collect();
    let mut summary = LengthSummary::from_lengths(&lengths);
    let (clamped, gaps) = traces
        .iter()
        .fold((0usize, 0usize), |(c, g), t| (c + t.clamped_gaps, g + t.gap_steps));
    summary.clamp_rate = if gaps == 0 { 0.0 } else { clamped as f64 / gaps as f64 };
    Ok((traces, summary))
}

/// Memoizes another scorer by `(state, time)`. Useful when the same states
/// recur across many samples on a shared grid, as with exact oracle scores.
pub struct CachedScorer<'a> {
    inner: &'a dyn InsertionScorer,
    cache: RwLock<HashMap<(Sequence, u64), GapMatrix<f64>>>,
}

impl<'a> CachedScorer<'a> {
    pub fn new(inner: &'a dyn InsertionScorer) -> Self {
        CachedScorer {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl InsertionScorer for CachedScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn score_matrix(&self, x_t: &Sequence, t: f64) -> Result<GapMatrix<f64>, crate::Error> {
        let key = (x_t.clone(), t.to_bits());
        if let Some(m) = self.cache.read().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let m = self.inner.score_matrix(x_t, t)?;
        self.cache.write().unwrap().insert(key, m.clone());
        Ok(m)
    }
}
