//! Self-check suite: every property is recomputed against the enumeration
//! references and reported as pass/fail.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    all_sequences, dse_term, exact_concrete_score, exact_insertion_matrix, one_insertions, recast_concrete,
    subsequence_enumeration, BruteSource, TinyDistribution,
};
use crate::dp::{enumerate_subsequences, n_ratios, Domain, DpEngine, DpError, NRatioMatrix, RatioSource};
use crate::matrix::GapMatrix;
use crate::objective::{dice_loss, dise_loss};
use crate::process::{forward_sample, transition_prob, LogLinear, NoiseSchedule};
use crate::scorer::{ScorerParams, ScorerShape};
use crate::seq::{Sequence, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VerifyLevel {
    #[default]
    Quick,
    Full,
}

impl FromStr for VerifyLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quick" => Ok(VerifyLevel::Quick),
            "full" => Ok(VerifyLevel::Full),
            other => Err(format!("unknown level {other:?} (expected quick or full)")),
        }
    }
}

impl fmt::Display for VerifyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerifyLevel::Quick => "quick",
            VerifyLevel::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub level: VerifyLevel,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<34} {:>9.1} ms  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.elapsed_ms,
                c.detail
            )?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Builds the ratio source under test for a given vocabulary size.
pub type SourceFactory = dyn Fn(usize) -> Box<dyn RatioSource>;

/// Wraps a source and inflates every ratio by a relative `bias`; exists so the
/// suite can demonstrate that it catches a broken engine.
pub struct FaultyDp<S> {
    pub inner: S,
    pub bias: f64,
}

impl<S: RatioSource> RatioSource for FaultyDp<S> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn count(&self, sub: &Sequence, seq: &Sequence) -> Result<f64, DpError> {
        self.inner.count(sub, seq)
    }

    fn n_ratios(&self, x_t: &Sequence, x_0: &Sequence) -> Result<NRatioMatrix, DpError> {
        let mut r = self.inner.n_ratios(x_t, x_0)?;
        r.ratios = r.ratios.map(|&x| x * (1.0 + self.bias));
        if let Some(e) = r.exact.as_mut() {
            let bias = self.bias;
            e.counts = e.counts.map(|&c| c + (c as f64 * bias).ceil() as u64);
        }
        Ok(r)
    }
}

fn seq(body: &[u32]) -> Sequence {
    Sequence::from_body(body).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng, max_len: usize, vocab: u32) -> (Sequence, Sequence) {
    let m = rng.random_range(0..=max_len);
    let body: Vec<u32> = (0..m).map(|_| rng.random_range(1..vocab)).collect();
    let keep = rng.random::<f64>();
    let sub: Vec<u32> = body.iter().copied().filter(|_| rng.random::<f64>() < keep).collect();
    (seq(&sub), seq(&body))
}

struct Ctx<'a> {
    level: VerifyLevel,
    seed: u64,
    source: &'a SourceFactory,
}

type CheckFn = fn(&Ctx<'_>) -> Result<String, String>;

fn check_worked_example(cx: &Ctx<'_>) -> Result<String, String> {
    // b=1 a=2 g=3
    let dp = (cx.source)(4);
    let n = dp.count(&seq(&[1, 2, 3]), &seq(&[1, 2, 1, 3, 1, 2, 3])).map_err(|e| e.to_string())?;
    if n != 5.0 {
        return Err(format!("N(bag, babgbag) = {n}, expected 5"));
    }
    let (x_t, y) = (seq(&[1, 2, 3]), seq(&[1, 2, 2, 3]));
    let total = dp.count(&x_t, &y).map_err(|e| e.to_string())?;
    let r = dp.n_ratios(&x_t, &y).map_err(|e| e.to_string())?;
    let a = Token(2).column().unwrap();
    let counts = (r.ratios[(1, a)] * total, r.ratios[(2, a)] * total);
    if total != 2.0 || counts != (1.0, 1.0) {
        return Err(format!("N(bag, baag) = {total}, insertion counts {counts:?}"));
    }
    Ok("N(bag, babgbag) = 5; N(bag, baag) = 2 with counts 1 at both a-gaps".into())
}

fn check_oracle_sweep(cx: &Ctx<'_>) -> Result<String, String> {
    let max_len = match cx.level {
        VerifyLevel::Quick => 5,
        VerifyLevel::Full => 8,
    };
    let dp = (cx.source)(4);
    let mut pairs = 0usize;
    for x_0 in all_sequences(4, max_len) {
        let subs = enumerate_subsequences(&x_0, 16).map_err(|e| e.to_string())?;
        for (x_t, &n) in &subs {
            pairs += 1;
            let got = dp.count(x_t, &x_0).map_err(|e| e.to_string())?;
            if got != n as f64 {
                return Err(format!("N({x_t:?}, {x_0:?}) = {got}, enumeration gives {n}"));
            }
            let r = dp.n_ratios(x_t, &x_0).map_err(|e| e.to_string())?;
            for i in 0..x_t.gaps() {
                for c in 0..3 {
                    let want = subs.get(&x_t.insert_after(i, Token::from_column(c))).copied().unwrap_or(0);
                    let ok = match &r.exact {
                        Some(e) => e.counts[(i, c)] == want && e.total == n,
                        None => (r.ratios[(i, c)] - want as f64 / n as f64).abs() <= 1e-12,
                    };
                    if !ok {
                        return Err(format!("insertion ({i}, {c}) of {x_t:?} into {x_0:?}: expected {want}"));
                    }
                }
            }
        }
    }
    Ok(format!("{pairs} (x_t, x_0) pairs with |x_0| <= {max_len} over 3 tokens"))
}

fn check_grand_sum(cx: &Ctx<'_>) -> Result<String, String> {
    let trials = match cx.level {
        VerifyLevel::Quick => 1000,
        VerifyLevel::Full => 10_000,
    };
    let dp = (cx.source)(5);
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed);
    for _ in 0..trials {
        let (x_t, x_0) = random_pair(&mut rng, 40, 5);
        let r = dp.n_ratios(&x_t, &x_0).map_err(|e| e.to_string())?;
        let d = (x_0.len() - x_t.len()) as f64;
        if (r.grand_sum() - d).abs() > 1e-9 * d.max(1.0) {
            return Err(format!("ratios of {x_t:?} in {x_0:?} sum to {}, expected {d}", r.grand_sum()));
        }
    }
    Ok(format!("{trials} random pairs"))
}

fn check_count_identity(cx: &Ctx<'_>) -> Result<String, String> {
    let trials = match cx.level {
        VerifyLevel::Quick => 1000,
        VerifyLevel::Full => 10_000,
    };
    let dp = (cx.source)(5);
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ 0x5eed);
    for _ in 0..trials {
        let (x_t, x_0) = random_pair(&mut rng, 40, 5);
        let r = dp.n_ratios(&x_t, &x_0).map_err(|e| e.to_string())?;
        match r.exact_identity_holds() {
            Some(true) => {}
            Some(false) => return Err(format!("integer identity fails for {x_t:?} in {x_0:?}")),
            None => return Err("source did not report exact counts".into()),
        }
    }
    Ok(format!("{trials} random pairs, exact integers"))
}

fn check_log_accuracy(cx: &Ctx<'_>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ 0x106);
    let (mut worst64, mut worst32) = (0f64, 0f64);
    for _ in 0..300 {
        let (x_t, x_0) = random_pair(&mut rng, 64, 3);
        let e = match n_ratios(&x_t, &x_0, 3, Domain::Exact) {
            Ok(e) => e,
            Err(DpError::Overflow) => continue,
            Err(err) => return Err(err.to_string()),
        };
        let total = e.exact.as_ref().unwrap().total as f64;
        let l = n_ratios(&x_t, &x_0, 3, Domain::Log).map_err(|e| e.to_string())?;
        let f = n_ratios(&x_t, &x_0, 3, Domain::LogF32).map_err(|e| e.to_string())?;
        worst64 = worst64.max((l.log_total.exp() - total).abs() / total);
        worst32 = worst32.max((f.log_total.exp() - total).abs() / total);
    }
    if worst64 > 1e-9 || worst32 > 1e-3 {
        return Err(format!("worst relative error f64 {worst64:.2e}, f32 {worst32:.2e}"));
    }
    // heavy repetition at length 256 overflows u64
    let x_0 = seq(&(0..256).map(|k| 1 + (k % 2) as u32).collect::<Vec<_>>());
    let x_t = seq(&(0..128).map(|k| 1 + (k % 2) as u32).collect::<Vec<_>>());
    if !matches!(n_ratios(&x_t, &x_0, 3, Domain::Exact), Err(DpError::Overflow)) {
        return Err("expected the length-256 instance to overflow exact counts".into());
    }
    let l = n_ratios(&x_t, &x_0, 3, Domain::Log).map_err(|e| e.to_string())?;
    let ok = l.ratios.as_slice().iter().all(|x| x.is_finite()) && (l.grand_sum() - 128.0).abs() <= 1e-6 * 128.0;
    if !ok {
        return Err(format!("length-256 ratios sum to {}", l.grand_sum()));
    }
    Ok(format!(
        "worst relative error f64 {worst64:.1e}, f32 {worst32:.1e}; length 256 sum {:.9}",
        l.grand_sum()
    ))
}

fn check_transition_sums(cx: &Ctx<'_>) -> Result<String, String> {
    let dp = (cx.source)(3);
    let max_len = match cx.level {
        VerifyLevel::Quick => 4,
        VerifyLevel::Full => 6,
    };
    let mut worst = 0f64;
    for x_s in all_sequences(3, max_len) {
        for &(s, t) in &[(0.0, 0.25), (0.0, 0.5), (0.2, 0.9), (0.5, 1.0)] {
            let total: f64 = subsequence_enumeration(&x_s)
                .map_err(|e| e.to_string())?
                .keys()
                .map(|x_t| transition_prob(x_t, &x_s, s, t, &LogLinear, dp.as_ref()).unwrap_or(f64::NAN))
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    if worst.is_nan() || worst > 1e-9 {
        return Err(format!("worst deviation from 1: {worst:e}"));
    }
    Ok(format!("all x_s with |x_s| <= {max_len}; worst deviation {worst:.1e}"))
}

fn check_forward_frequencies(cx: &Ctx<'_>) -> Result<String, String> {
    let dp = (cx.source)(3);
    let n = match cx.level {
        VerifyLevel::Quick => 40_000,
        VerifyLevel::Full => 200_000,
    };
    let tol = match cx.level {
        VerifyLevel::Quick => 0.02,
        VerifyLevel::Full => 0.01,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ 0xf0);
    let mut worst = 0f64;
    for x_0 in [seq(&[1, 2]), seq(&[1, 1, 2, 1]), seq(&[2, 1, 2, 2, 1])] {
        let t = 0.45;
        let mut freq: HashMap<Sequence, usize> = HashMap::new();
        for _ in 0..n {
            let x = forward_sample(&x_0, 0.0, t, &LogLinear, &mut rng).map_err(|e| e.to_string())?.x_t;
            *freq.entry(x).or_insert(0) += 1;
        }
        let mut tv = 0.0;
        for x_t in subsequence_enumeration(&x_0).map_err(|e| e.to_string())?.keys() {
            let p = transition_prob(x_t, &x_0, 0.0, t, &LogLinear, dp.as_ref()).map_err(|e| e.to_string())?;
            let q = freq.get(x_t).copied().unwrap_or(0) as f64 / n as f64;
            tv += (p - q).abs();
        }
        worst = worst.max(tv / 2.0);
    }
    if worst > tol {
        return Err(format!("total variation {worst:.4} exceeds {tol}"));
    }
    Ok(format!("{n} samples per instance, worst TV {worst:.4}"))
}

fn check_bound(cx: &Ctx<'_>) -> Result<String, String> {
    let dp = (cx.source)(3);
    let family = all_sequences(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ 0xb0);
    let dists = [
        TinyDistribution::uniform(family.clone(), 3).map_err(|e| e.to_string())?,
        TinyDistribution::uniform(vec![seq(&[1, 2]), seq(&[2, 1])], 3).map_err(|e| e.to_string())?,
    ];
    let mut instances = 0;
    let mut worst = f64::INFINITY;
    for dist in &dists {
        for &t in &[0.25, 0.5, 0.75] {
            for (x_0, _) in dist.support() {
                for x_t in subsequence_enumeration(x_0).map_err(|e| e.to_string())?.keys() {
                    let oracle = exact_insertion_matrix(dist, x_t, t, &LogLinear).map_err(|e| e.to_string())?;
                    for perturb in [false, true] {
                        let s = if perturb {
                            oracle.map(|&x| x * rng.random_range(0.3..3.0) + rng.random_range(1e-3..0.5))
                        } else {
                            oracle.clone()
                        };
                        let dise = match dise_loss(&s, x_t, x_0, t, &LogLinear, dp.as_ref()) {
                            Ok(l) => l.total,
                            Err(e) => return Err(e.to_string()),
                        };
                        let dse = dse_term(x_0, x_t, t, &LogLinear, 3, &|y| {
                            recast_concrete(&s, x_t, y, t, &LogLinear).unwrap_or(f64::NAN)
                        })
                        .map_err(|e| e.to_string())?;
                        worst = worst.min(dise - dse);
                        instances += 1;
                        let tight = one_insertions(x_t, 3).keys().all(|y| {
                            crate::dp::brute_count(x_t, y).map(|n| n == 1).unwrap_or(false)
                        });
                        if !perturb && (dise - dse).abs() > 1e-9 {
                            return Err(format!("oracle scores: DISE {dise} != DSE {dse} at {x_t:?} / {x_0:?}"));
                        }
                        if tight && (dise - dse).abs() > 1e-9 {
                            return Err(format!("multiplicity-free {x_t:?}: DISE {dise} != DSE {dse}"));
                        }
                    }
                }
            }
        }
    }
    if worst < -1e-9 {
        return Err(format!("DISE - DSE reached {worst:e}"));
    }
    Ok(format!("{instances} instances, min DISE - DSE = {worst:.2e}"))
}

fn check_dice_dise(cx: &Ctx<'_>) -> Result<String, String> {
    let dp = (cx.source)(4);
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ 0xd1);
    let trials = match cx.level {
        VerifyLevel::Quick => 200,
        VerifyLevel::Full => 1000,
    };
    let mut worst = 0f64;
    for _ in 0..trials {
        let (x_t, x_0) = random_pair(&mut rng, 10, 4);
        let d = (x_0.len() - x_t.len()) as f64;
        let raw: Vec<f64> = (0..x_t.gaps() * 3).map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let s = GapMatrix::from_vec(x_t.gaps(), 3, raw.iter().map(|x| x * d / z).collect());
        let t = rng.random_range(0.01..1.0);
        let a = dice_loss(&s, &x_t, &x_0, t, &LogLinear, dp.as_ref()).map_err(|e| e.to_string())?;
        let b = dise_loss(&s, &x_t, &x_0, t, &LogLinear, dp.as_ref()).map_err(|e| e.to_string())?;
        worst = worst.max((a.total - b.total).abs() / a.total.abs().max(1.0));
    }
    if worst > 1e-9 {
        return Err(format!("worst relative gap {worst:e}"));
    }
    Ok(format!("{trials} normalized score matrices, worst gap {worst:.1e}"))
}

fn check_recast(cx: &Ctx<'_>) -> Result<String, String> {
    let dists = [
        TinyDistribution::uniform(all_sequences(3, 3), 3).map_err(|e| e.to_string())?,
        TinyDistribution::new(
            vec![(seq(&[1, 2, 2]), 0.5), (seq(&[2, 2, 1, 1]), 0.3), (seq(&[1]), 0.2)],
            3,
        )
        .map_err(|e| e.to_string())?,
    ];
    let ts: &[f64] = match cx.level {
        VerifyLevel::Quick => &[0.5],
        VerifyLevel::Full => &[0.25, 0.5, 0.75],
    };
    let mut pairs = 0;
    let mut worst = 0f64;
    for dist in &dists {
        for &t in ts {
            for x_t in all_sequences(3, 3) {
                if super::exact_marginal(dist, &x_t, t, &LogLinear).map_err(|e| e.to_string())? == 0.0 {
                    continue;
                }
                for y in one_insertions(&x_t, 3).keys() {
                    let c = exact_concrete_score(dist, &x_t, y, t, &LogLinear).map_err(|e| e.to_string())?;
                    worst = worst.max((c.value - c.recast).abs() / c.value.abs().max(1.0));
                    pairs += 1;
                }
            }
        }
    }
    if worst > 1e-12 {
        return Err(format!("worst mismatch {worst:e}"));
    }
    Ok(format!("{pairs} (x_t, y) pairs, worst mismatch {worst:.1e}"))
}

fn check_time_independence(_: &Ctx<'_>) -> Result<String, String> {
    let dist = TinyDistribution::new(
        vec![(seq(&[1, 2, 2]), 0.4), (seq(&[2, 1, 1]), 0.35), (seq(&[2, 2, 2]), 0.25)],
        3,
    )
    .map_err(|e| e.to_string())?;
    let mut worst = 0f64;
    for x_t in all_sequences(3, 3) {
        let Ok(a) = exact_insertion_matrix(&dist, &x_t, 0.3, &LogLinear) else {
            continue;
        };
        let b = exact_insertion_matrix(&dist, &x_t, 0.7, &LogLinear).map_err(|e| e.to_string())?;
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            worst = worst.max((p - q).abs());
        }
        worst = worst.max((a.sum() - (3 - x_t.body_len()) as f64).abs());
    }
    if worst > 1e-12 {
        return Err(format!("worst difference {worst:e}"));
    }
    Ok(format!("worst difference {worst:.1e}"))
}

fn check_gradients(cx: &Ctx<'_>) -> Result<String, String> {
    let draws = match cx.level {
        VerifyLevel::Quick => 10,
        VerifyLevel::Full => 50,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ 0x9d);
    let dp = (cx.source)(3);
    let (mut worst, mut worst_abs) = (0f64, 0f64);
    for k in 0..2 * draws {
        let shape = if k % 2 == 0 {
            ScorerShape {
                time_buckets: 4,
                len_buckets: 8,
                ..ScorerShape::dise(3)
            }
        } else {
            ScorerShape::dice(3, 5)
        };
        let mut p = ScorerParams::zeros(shape).map_err(|e| e.to_string())?;
        p.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let x_0 = seq(&(0..5).map(|_| rng.random_range(1..3)).collect::<Vec<u32>>());
        let t = rng.random_range(0.05..0.95);
        let x_t = forward_sample(&x_0, 0.0, t, &LogLinear, &mut rng).map_err(|e| e.to_string())?.x_t;
        let e = gradient_error(&p, &x_t, &x_0, t, &LogLinear, dp.as_ref())?;
        worst = worst.max(e.relative);
        worst_abs = worst_abs.max(e.absolute);
    }
    if worst > 1e-5 {
        return Err(format!("worst relative error {worst:e}"));
    }
    Ok(format!(
        "{draws} draws per mode, worst relative error {worst:.1e}, worst absolute difference {worst_abs:.1e}"
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientError {
    /// Largest relative gap; entries agreeing within `1e-8` absolute count as exact.
    pub relative: f64,
    pub absolute: f64,
}

/// Analytic vs central-difference gradients (`h = 1e-5`).
pub fn gradient_error(
    p: &ScorerParams,
    x_t: &Sequence,
    x_0: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
    dp: &dyn RatioSource,
) -> Result<GradientError, String> {
    let (_, g) = p.loss_and_grad(x_t, x_0, t, schedule, dp).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let (mut worst, mut absolute) = (0f64, 0f64);
    let mut q = p.clone();
    for k in 0..p.values.len() {
        q.values[k] = p.values[k] + h;
        let a = q.loss_and_grad(x_t, x_0, t, schedule, dp).map_err(|e| e.to_string())?.0.total;
        q.values[k] = p.values[k] - h;
        let b = q.loss_and_grad(x_t, x_0, t, schedule, dp).map_err(|e| e.to_string())?.0.total;
        q.values[k] = p.values[k];
        let fd = (a - b) / (2.0 * h);
        let diff = (fd - g.values[k]).abs();
        absolute = absolute.max(diff);
        if diff > 1e-8 {
            worst = worst.max(diff / fd.abs().max(g.values[k].abs()));
        }
    }
    Ok(GradientError {
        relative: worst,
        absolute,
    })
}

const CHECKS: &[(&str, CheckFn)] = &[
    ("worked-example-counts", check_worked_example),
    ("dp-vs-enumeration-sweep", check_oracle_sweep),
    ("ratio-grand-sum", check_grand_sum),
    ("insertion-count-identity", check_count_identity),
    ("log-domain-accuracy", check_log_accuracy),
    ("transition-normalization", check_transition_sums),
    ("forward-sample-frequencies", check_forward_frequencies),
    ("dise-bounds-dse", check_bound),
    ("dice-equals-dise-normalized", check_dice_dise),
    ("concrete-score-recast", check_recast),
    ("fixed-length-time-independence", check_time_independence),
    ("scorer-gradients", check_gradients),
];

/// Names of all checks in run order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check with ratio sources built by `source`.
pub fn run_with(level: VerifyLevel, seed: u64, source: &SourceFactory, mut on_check: impl FnMut(&CheckOutcome)) -> VerifyReport {
    let cx = Ctx { level, seed, source };
    let mut report = VerifyReport {
        level,
        checks: Vec::new(),
    };
    for &(name, f) in CHECKS {
        let began = Instant::now();
        let r = f(&cx);
        let outcome = CheckOutcome {
            name,
            passed: r.is_ok(),
            detail: r.unwrap_or_else(|e| e),
            elapsed_ms: began.elapsed().as_secs_f64() * 1e3,
        };
        on_check(&outcome);
        report.checks.push(outcome);
    }
    report
}

/// Runs the single check called `name`, if there is one.
pub fn run_check(name: &str, level: VerifyLevel, seed: u64, source: &SourceFactory) -> Option<CheckOutcome> {
    let &(name, f) = CHECKS.iter().find(|c| c.0 == name)?;
    let cx = Ctx { level, seed, source };
    let began = Instant::now();
    let r = f(&cx);
    Some(CheckOutcome {
        name,
        passed: r.is_ok(),
        detail: r.unwrap_or_else(|e| e),
        elapsed_ms: began.elapsed().as_secs_f64() * 1e3,
    })
}

/// [`run_with`] over the exact-domain DP engine.
pub fn run(level: VerifyLevel, seed: u64) -> VerifyReport {
    run_with(level, seed, &|v| Box::new(DpEngine::new(v).with_domain(Domain::Exact)), |_| {})
}

/// The brute-force source as a factory, for checking the checks themselves.
pub fn brute_factory(v: usize) -> Box<dyn RatioSource> {
    Box::new(BruteSource { vocab_size: v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faulty_engine_fails_grand_sum() {
        let faulty = |v: usize| -> Box<dyn RatioSource> {
            Box::new(FaultyDp {
                inner: DpEngine::new(v).with_domain(Domain::Exact),
                bias: 1e-3,
            })
        };
        let cx = Ctx {
            level: VerifyLevel::Quick,
            seed: 1,
            source: &faulty,
        };
        assert!(check_grand_sum(&cx).is_err());
        assert!(check_count_identity(&cx).is_err());
        let good = |v: usize| -> Box<dyn RatioSource> { Box::new(DpEngine::new(v)) };
        let cx = Ctx { source: &good, ..cx };
        assert!(check_grand_sum(&cx).is_ok());
    }

    #[test]
    fn worked_example_passes_on_both_sources() {
        for f in [&brute_factory as &SourceFactory, &|v| Box::new(DpEngine::new(v)) as Box<dyn RatioSource>] {
            let cx = Ctx {
                level: VerifyLevel::Quick,
                seed: 0,
                source: f,
            };
            check_worked_example(&cx).unwrap();
            check_time_independence(&cx).unwrap();
        }
    }
}
