//! Exact references over tiny, fully enumerable instances.
//!
//! Counts here come from direct enumeration ([`brute_count`]), never from the
//! DP engine, so the two can be checked against each other.

pub mod verify;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dp::{brute::brute_count_tokens, brute_count, enumerate_subsequences, DpError, NRatioMatrix, RatioSource};
use crate::matrix::GapMatrix;
use crate::process::{forward_rate, transition_prob, NoiseSchedule, ProcessError};
use crate::scorer::InsertionScorer;
use crate::seq::{Sequence, Token};

/// Largest vocabulary (including the begin marker) of a tiny instance.
pub const TINY_MAX_VOCAB: usize = 4;
/// Longest support sequence of a tiny instance, marker excluded.
pub const TINY_MAX_LEN: usize = 4;
/// Longest sequence [`subsequence_enumeration`] accepts, marker included.
pub const ENUM_MAX_LEN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("x_t has zero probability at this time")]
    ZeroDenominator,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("y is not a single insertion away from x_t")]
    NotSingleInsertion,
    #[error("time {0} outside (0, 1]")]
    InvalidTime(f64),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// Counts by enumeration behind the [`RatioSource`] interface.
#[derive(Clone, Copy, Debug)]
pub struct BruteSource {
    pub vocab_size: usize,
}

impl RatioSource for BruteSource {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn count(&self, sub: &Sequence, seq: &Sequence) -> Result<f64, DpError> {
        Ok(brute_count(sub, seq)? as f64)
    }

    fn n_ratios(&self, x_t: &Sequence, x_0: &Sequence) -> Result<NRatioMatrix, DpError> {
        let total = brute_count(x_t, x_0)?;
        if total == 0 {
            return Err(DpError::NotASubsequence);
        }
        let mut counts = GapMatrix::zeros(x_t.gaps(), self.vocab_size - 1);
        for i in 0..x_t.gaps() {
            for c in 0..counts.cols() {
                let y = x_t.insert_after(i, Token::from_column(c));
                counts[(i, c)] = brute_count_tokens(y.tokens(), x_0.tokens())?;
            }
        }
        Ok(NRatioMatrix {
            ratios: counts.map(|&k| k as f64 / total as f64),
            domain: crate::dp::Domain::Exact,
            log_total: (total as f64).ln(),
            deleted: x_0.len().saturating_sub(x_t.len()),
            exact: Some(crate::dp::ExactCounts { counts, total }),
        })
    }
}

/// Finite data distribution over short sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyDistribution {
    support: Vec<(Sequence, f64)>,
    vocab_size: usize,
}

impl TinyDistribution {
    pub fn new(support: Vec<(Sequence, f64)>, vocab_size: usize) -> Result<Self, OracleError> {
        if !(2..=TINY_MAX_VOCAB).contains(&vocab_size) {
            return Err(OracleError::TooLarge(format!("vocabulary of {vocab_size} ids")));
        }
        if support.is_empty() {
            return Err(OracleError::InvalidDistribution("empty support".into()));
        }
        let mut total = 0.0;
        for (k, (x, p)) in support.iter().enumerate() {
            if x.body_len() > TINY_MAX_LEN {
                return Err(OracleError::TooLarge(format!("support sequence of length {}", x.body_len())));
            }
            if x.check_vocab(vocab_size).is_err() {
                return Err(OracleError::InvalidDistribution(format!("{x:?} uses ids outside the vocabulary")));
            }
            if p.is_nan() || *p <= 0.0 {
                return Err(OracleError::InvalidDistribution(format!("probability {p} is not positive")));
            }
            if support[..k].iter().any(|(y, _)| y == x) {
                return Err(OracleError::InvalidDistribution(format!("{x:?} listed twice")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(OracleError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(TinyDistribution { support, vocab_size })
    }

    pub fn uniform(seqs: Vec<Sequence>, vocab_size: usize) -> Result<Self, OracleError> {
        let p = 1.0 / seqs.len().max(1) as f64;
        Self::new(seqs.into_iter().map(|s| (s, p)).collect(), vocab_size)
    }

    pub fn support(&self) -> &[(Sequence, f64)] {
        &self.support
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn source(&self) -> BruteSource {
        BruteSource {
            vocab_size: self.vocab_size,
        }
    }

    pub fn max_len(&self) -> usize {
        self.support.iter().map(|(x, _)| x.body_len()).max().unwrap_or(0)
    }

    pub fn prob(&self, x: &Sequence) -> f64 {
        self.support.iter().find(|(y, _)| y == x).map_or(0.0, |e| e.1)
    }
}

/// Every sequence over ids `1..vocab_size` with at most `max_len` tokens after the marker.
pub fn all_sequences(vocab_size: usize, max_len: usize) -> Vec<Sequence> {
    let mut out = vec![Sequence::bos_only()];
    let mut frontier = vec![Sequence::bos_only()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for v in 1..vocab_size as u32 {
                next.push(s.insert_after(s.len() - 1, Token(v)));
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn check_time(t: f64) -> Result<(), OracleError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidTime(t))
    }
}

/// `p_t(x) = sum_{x_0} p_0(x_0) p_{t|0}(x | x_0)`.
pub fn exact_marginal(dist: &TinyDistribution, x: &Sequence, t: f64, schedule: &dyn NoiseSchedule) -> Result<f64, OracleError> {
    check_time(t)?;
    if x.body_len() > TINY_MAX_LEN {
        return Ok(0.0);
    }
    let src = dist.source();
    let mut p = 0.0;
    for (x_0, w) in &dist.support {
        p += w * transition_prob(x, x_0, 0.0, t, schedule, &src)?;
    }
    Ok(p)
}

/// `E[a^{|x_0|} N(Ins(x_t,i,v), x_0)] / E[a^{|x_0|} N(x_t, x_0)]` with
/// `a = 1 - e^{-sigma_bar(t)}`, for every gap and token.
pub fn exact_insertion_matrix(
    dist: &TinyDistribution,
    x_t: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
) -> Result<GapMatrix<f64>, OracleError> {
    check_time(t)?;
    let a = schedule.deletion(0.0, t);
    let mut den = 0.0;
    let mut num = GapMatrix::<f64>::zeros(x_t.gaps(), dist.vocab_size - 1);
    for (x_0, w) in &dist.support {
        let base = w * a.powi(x_0.body_len() as i32);
        let n = brute_count(x_t, x_0)?;
        if n == 0 {
            continue;
        }
        den += base * n as f64;
        for i in 0..x_t.gaps() {
            for c in 0..num.cols() {
                let y = x_t.insert_after(i, Token::from_column(c));
                num[(i, c)] += base * brute_count(&y, x_0)? as f64;
            }
        }
    }
    if den <= 0.0 {
        return Err(OracleError::ZeroDenominator);
    }
    Ok(num.map(|&x| x / den))
}

pub fn exact_insertion_score(
    dist: &TinyDistribution,
    x_t: &Sequence,
    t: f64,
    i: usize,
    v: Token,
    schedule: &dyn NoiseSchedule,
) -> Result<f64, OracleError> {
    let c = v.column().ok_or(OracleError::NotSingleInsertion)?;
    if i >= x_t.gaps() || c + 1 >= dist.vocab_size {
        return Err(OracleError::NotSingleInsertion);
    }
    Ok(exact_insertion_matrix(dist, x_t, t, schedule)?[(i, c)])
}

/// All states one insertion away from `x_t`, each with the actions producing it.
pub fn one_insertions(x_t: &Sequence, vocab_size: usize) -> BTreeMap<Sequence, Vec<(usize, usize)>> {
    let mut out: BTreeMap<Sequence, Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..x_t.gaps() {
        for c in 0..vocab_size - 1 {
            out.entry(x_t.insert_after(i, Token::from_column(c))).or_default().push((i, c));
        }
    }
    out
}

/// Concrete score two ways: the ratio of marginals, and the prefactor times
/// the average insertion score over the actions that produce `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcreteScore {
    pub value: f64,
    pub recast: f64,
}

/// `e^{-sigma_bar} / (1 - e^{-sigma_bar}) / N(x_t, y) * sum over actions of the insertion score`.
pub fn recast_concrete(
    insertion: &GapMatrix<f64>,
    x_t: &Sequence,
    y: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
) -> Result<f64, OracleError> {
    let actions = one_insertions(x_t, insertion.cols() + 1);
    let acts = actions.get(y).ok_or(OracleError::NotSingleInsertion)?;
    let n = brute_count(x_t, y)? as f64;
    let pre = schedule.survival(0.0, t) / schedule.deletion(0.0, t);
    Ok(pre / n * acts.iter().map(|&(i, c)| insertion[(i, c)]).sum::<f64>())
}

pub fn exact_concrete_score(
    dist: &TinyDistribution,
    x_t: &Sequence,
    y: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
) -> Result<ConcreteScore, OracleError> {
    check_time(t)?;
    if y.len() != x_t.len() + 1 || brute_count(x_t, y)? == 0 {
        return Err(OracleError::NotSingleInsertion);
    }
    let px = exact_marginal(dist, x_t, t, schedule)?;
    if px <= 0.0 {
        return Err(OracleError::ZeroDenominator);
    }
    let value = exact_marginal(dist, y, t, schedule)? / px;
    let ins = exact_insertion_matrix(dist, x_t, t, schedule)?;
    let recast = recast_concrete(&ins, x_t, y, t, schedule)?;
    Ok(ConcreteScore { value, recast })
}

/// Inner score-entropy sum for one `(x_0, x_t)`:
/// `sum_y Q_t(y, x_t) [s_y - r_y ln s_y + r_y (ln r_y - 1)]` over every `y`
/// one insertion away, with `r_y = p_t(y | x_0) / p_t(x_t | x_0)`.
pub fn dse_term(
    x_0: &Sequence,
    x_t: &Sequence,
    t: f64,
    schedule: &dyn NoiseSchedule,
    vocab_size: usize,
    concrete: &dyn Fn(&Sequence) -> f64,
) -> Result<f64, OracleError> {
    check_time(t)?;
    let src = BruteSource { vocab_size };
    let px = transition_prob(x_t, x_0, 0.0, t, schedule, &src)?;
    if px <= 0.0 {
        return Err(OracleError::ZeroDenominator);
    }
    let mut total = 0.0;
    for y in one_insertions(x_t, vocab_size).keys() {
        let rate = forward_rate(y, x_t, t.min(crate::process::T_MAX), schedule, &src)?;
        let r = transition_prob(y, x_0, 0.0, t, schedule, &src)? / px;
        let s = concrete(y);
        total += rate * crate::objective::dise_bracket(s, r);
    }
    Ok(total)
}

/// `E_{x_0} E_{x_t | x_0}` of [`dse_term`], with concrete scores from `provider(x_t, y)`.
pub fn exact_dse(
    dist: &TinyDistribution,
    provider: &dyn Fn(&Sequence, &Sequence) -> f64,
    t: f64,
    schedule: &dyn NoiseSchedule,
) -> Result<f64, OracleError> {
    let src = dist.source();
    let mut total = 0.0;
    for (x_0, w) in &dist.support {
        for x_t in subsequence_enumeration(x_0)?.keys() {
            let p = transition_prob(x_t, x_0, 0.0, t, schedule, &src)?;
            if p == 0.0 {
                continue;
            }
            total += w * p * dse_term(x_0, x_t, t, schedule, dist.vocab_size, &|y| provider(x_t, y))?;
        }
    }
    Ok(total)
}

/// Distinct subsequences of `x_s` that keep the marker, with multiplicities.
pub fn subsequence_enumeration(x_s: &Sequence) -> Result<BTreeMap<Sequence, u64>, OracleError> {
    match enumerate_subsequences(x_s, ENUM_MAX_LEN) {
        Ok(m) => Ok(m.into_iter().collect()),
        Err(DpError::TooLarge { len, max }) => Err(OracleError::TooLarge(format!("sequence of {len} tokens (max {max})"))),
        Err(e) => Err(e.into()),
    }
}

/// Exact insertion scores of a tiny distribution as a scorer. States outside
/// the support (reachable by simultaneous insertions) get all-zero scores.
pub struct ExactScorer<'a> {
    pub dist: &'a TinyDistribution,
    pub schedule: &'a dyn NoiseSchedule,
}

impl InsertionScorer for ExactScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.dist.vocab_size
    }

    fn score_matrix(&self, x_t: &Sequence, t: f64) -> Result<GapMatrix<f64>, crate::Error> {
        match exact_insertion_matrix(self.dist, x_t, t, self.schedule) {
            Err(OracleError::ZeroDenominator) => Ok(GapMatrix::zeros(x_t.gaps(), self.dist.vocab_size - 1)),
            r => Ok(r?),
        }
    }
}
