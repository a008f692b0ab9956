//! Subsequence-count dynamic programming.
//!
//! `N(x, y)` is the number of ways to embed `x` into `y` as a subsequence. The
//! engine builds prefix and suffix count tables of `x_t` against `x_0` and
//! combines them into `N(Ins(x_t, i, v), x_0)` for every gap `i` and token `v`
//! in one pass, either in checked 64-bit integers or in log space.

pub mod brute;
pub mod semiring;
pub mod tables;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::GapMatrix;
use crate::seq::{Sequence, Token};

pub use brute::{brute_count, enumerate_subsequences};
pub use semiring::{logaddexp, CountValue, LogCount, LOG_ZERO};
pub use tables::{insertion_counts, prefix_table, suffix_table, total_count, DpTable, PrefixTable, SuffixTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("count exceeds 64-bit integer range; use the log domain")]
    Overflow,
    #[error("x_t is not a subsequence of x_0")]
    NotASubsequence,
    #[error("sequence length {len} exceeds enumeration bound {max}")]
    TooLarge { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidToken { id: u32, size: usize },
    #[error("pair {index}: {source}")]
    InPair {
        index: usize,
        #[source]
        source: Box<DpError>,
    },
}

/// Arithmetic used for the tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Domain {
    /// Checked `u64`; fails with [`DpError::Overflow`].
    Exact,
    /// Log space in `f64`.
    Log,
    /// Log space in `f32`.
    LogF32,
    /// Exact, falling back to [`Domain::Log`] on overflow.
    #[default]
    Auto,
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Domain::Exact),
            "log" | "log64" => Ok(Domain::Log),
            "log32" | "logf32" => Ok(Domain::LogF32),
            "auto" => Ok(Domain::Auto),
            other => Err(format!("unknown domain {other:?} (expected exact, log, log32 or auto)")),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Exact => "exact",
            Domain::Log => "log",
            Domain::LogF32 => "log32",
            Domain::Auto => "auto",
        })
    }
}

/// Integer numerators behind an exact-mode ratio matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactCounts {
    /// `N(Ins(x_t, i, v), x_0)`.
    pub counts: GapMatrix<u64>,
    /// `N(x_t, x_0)`.
    pub total: u64,
}

/// Training targets `N(Ins(x_t, i, v), x_0) / N(x_t, x_0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NRatioMatrix {
    pub ratios: GapMatrix<f64>,
    /// Domain actually used (never [`Domain::Auto`]).
    pub domain: Domain,
    /// `ln N(x_t, x_0)`.
    pub log_total: f64,
    /// `|x_0| - |x_t|`.
    pub deleted: usize,
    /// Present in exact mode.
    pub exact: Option<ExactCounts>,
}

impl NRatioMatrix {
    pub fn grand_sum(&self) -> f64 {
        self.ratios.sum()
    }

    /// Whether the integer numerators sum to `N(x_t, x_0) * (|x_0| - |x_t|)`;
    /// `None` outside exact mode.
    pub fn exact_identity_holds(&self) -> Option<bool> {
        self.exact.as_ref().map(|e| {
            let sum: u128 = e.counts.as_slice().iter().map(|&c| c as u128).sum();
            sum == e.total as u128 * self.deleted as u128
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.ratios.shape()
    }
}

fn check_tokens(seq: &[Token], vocab_size: usize) -> Result<(), DpError> {
    match seq.iter().find(|t| t.id() as usize >= vocab_size) {
        Some(t) => Err(DpError::InvalidToken {
            id: t.id(),
            size: vocab_size,
        }),
        None => Ok(()),
    }
}

/// Reusable table storage for one worker.
struct Scratch<C> {
    prefix: Vec<C>,
    suffix: Vec<C>,
}

impl<C> Scratch<C> {
    fn new(cells: usize) -> Self {
        Scratch {
            prefix: Vec::with_capacity(cells),
            suffix: Vec::with_capacity(cells),
        }
    }
}

fn ratios_in<C: CountValue>(
    x_t: &Sequence,
    x_0: &Sequence,
    vocab_size: usize,
    parallel: bool,
    scratch: &mut Scratch<C>,
) -> Result<(GapMatrix<C>, C), DpError> {
    let (t, o) = (x_t.tokens(), x_0.tokens());
    check_tokens(t, vocab_size)?;
    check_tokens(o, vocab_size)?;
    let pb = std::mem::take(&mut scratch.prefix);
    let sb = std::mem::take(&mut scratch.suffix);
    let (p, s) = if parallel {
        rayon::join(
            || tables::prefix_table_in(t, o, true, pb),
            || tables::suffix_table_in(t, o, true, sb),
        )
    } else {
        (
            tables::prefix_table_in(t, o, false, pb),
            tables::suffix_table_in(t, o, false, sb),
        )
    };
    let (p, s) = (p?, s?);
    let total = total_count(&p);
    let counts = if total.is_zero() {
        Err(DpError::NotASubsequence)
    } else {
        tables::insertion_counts_from(t, o, &p, &s, vocab_size)
    };
    scratch.prefix = p.into_buffer();
    scratch.suffix = s.into_buffer();
    Ok((counts?, total))
}

fn finish<C: CountValue>(counts: GapMatrix<C>, total: C, deleted: usize) -> NRatioMatrix {
    NRatioMatrix {
        ratios: counts.map(|&c| c.ratio(total)),
        domain: C::DOMAIN,
        log_total: total.ln(),
        deleted,
        exact: None,
    }
}

fn n_ratios_scratch(
    x_t: &Sequence,
    x_0: &Sequence,
    vocab_size: usize,
    domain: Domain,
    parallel: bool,
    scratch: &mut Scratches,
) -> Result<NRatioMatrix, DpError> {
    let deleted = x_0.len().saturating_sub(x_t.len());
    match domain {
        Domain::Exact => {
            let (counts, total) = ratios_in::<u64>(x_t, x_0, vocab_size, parallel, &mut scratch.exact)?;
            let mut out = finish(counts.clone(), total, deleted);
            out.exact = Some(ExactCounts { counts, total });
            Ok(out)
        }
        Domain::Log => {
            let (counts, total) = ratios_in::<LogCount<f64>>(x_t, x_0, vocab_size, parallel, &mut scratch.log)?;
            Ok(finish(counts, total, deleted))
        }
        Domain::LogF32 => {
            let (counts, total) = ratios_in::<LogCount<f32>>(x_t, x_0, vocab_size, parallel, &mut scratch.log32)?;
            Ok(finish(counts, total, deleted))
        }
        Domain::Auto => match n_ratios_scratch(x_t, x_0, vocab_size, Domain::Exact, parallel, scratch) {
            Err(DpError::Overflow) => n_ratios_scratch(x_t, x_0, vocab_size, Domain::Log, parallel, scratch),
            r => r,
        },
    }
}

#[derive(Default)]
struct Scratches {
    exact: Scratch<u64>,
    log: Scratch<LogCount<f64>>,
    log32: Scratch<LogCount<f32>>,
}

impl<C> Default for Scratch<C> {
    fn default() -> Self {
        Scratch::new(0)
    }
}

/// N-ratio targets for one pair. `vocab_size` counts the begin marker.
pub fn n_ratios(x_t: &Sequence, x_0: &Sequence, vocab_size: usize, domain: Domain) -> Result<NRatioMatrix, DpError> {
    n_ratios_scratch(x_t, x_0, vocab_size, domain, false, &mut Scratches::default())
}

/// [`n_ratios`] over many pairs. Each worker keeps table buffers sized for the
/// longest pair in the batch and reuses them; cells beyond a pair's own
/// extent are never read. Pairs are independent, so the output does not
/// depend on scheduling.
pub fn batched_n_ratios(
    pairs: &[(Sequence, Sequence)],
    vocab_size: usize,
    domain: Domain,
    parallel: bool,
) -> Result<Vec<NRatioMatrix>, DpError> {
    let cells = pairs
        .iter()
        .map(|(a, b)| (a.len() + 1) * (b.len() + 1))
        .max()
        .unwrap_or(0);
    let init = || {
        let mut s = Scratches::default();
        match domain {
            Domain::Log => s.log = Scratch::new(cells),
            Domain::LogF32 => s.log32 = Scratch::new(cells),
            _ => s.exact = Scratch::new(cells),
        }
        s
    };
    let one = |scratch: &mut Scratches, (index, (x_t, x_0)): (usize, &(Sequence, Sequence))| {
        n_ratios_scratch(x_t, x_0, vocab_size, domain, false, scratch).map_err(|e| DpError::InPair {
            index,
            source: Box::new(e),
        })
    };
    if parallel {
        pairs.par_iter().enumerate().map_init(init, one).collect()
    } else {
        let mut scratch = init();
        pairs.iter().enumerate().map(|p| one(&mut scratch, p)).collect()
    }
}

/// `N(sub, seq)` as a real number in the requested domain.
pub fn count(sub: &Sequence, seq: &Sequence, domain: Domain) -> Result<f64, DpError> {
    let (a, b) = (sub.tokens(), seq.tokens());
    match domain {
        Domain::Exact => Ok(total_count(&prefix_table::<u64>(a, b, false)?) as f64),
        Domain::Log => Ok(total_count(&prefix_table::<LogCount<f64>>(a, b, false)?).ratio(LogCount(0.0))),
        Domain::LogF32 => Ok(total_count(&prefix_table::<LogCount<f32>>(a, b, false)?).ratio(LogCount(0.0))),
        Domain::Auto => match count(sub, seq, Domain::Exact) {
            Err(DpError::Overflow) => count(sub, seq, Domain::Log),
            r => r,
        },
    }
}

/// Anything that can supply subsequence counts and N-ratio targets. The
/// objectives and oracle checks take this instead of a concrete engine.
pub trait RatioSource: Sync {
    /// Number of ids including the begin marker.
    fn vocab_size(&self) -> usize;

    fn count(&self, sub: &Sequence, seq: &Sequence) -> Result<f64, DpError>;

    fn n_ratios(&self, x_t: &Sequence, x_0: &Sequence) -> Result<NRatioMatrix, DpError>;
}

/// The DP engine with a fixed domain and vocabulary size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DpEngine {
    pub domain: Domain,
    pub vocab_size: usize,
    /// Split table columns across threads and build both tables concurrently.
    pub parallel: bool,
}

impl DpEngine {
    pub fn new(vocab_size: usize) -> Self {
        DpEngine {
            domain: Domain::Auto,
            vocab_size,
            parallel: false,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn batched_n_ratios(&self, pairs: &[(Sequence, Sequence)]) -> Result<Vec<NRatioMatrix>, DpError> {
        batched_n_ratios(pairs, self.vocab_size, self.domain, self.parallel)
    }
}

impl RatioSource for DpEngine {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn count(&self, sub: &Sequence, seq: &Sequence) -> Result<f64, DpError> {
        count(sub, seq, self.domain)
    }

    fn n_ratios(&self, x_t: &Sequence, x_0: &Sequence) -> Result<NRatioMatrix, DpError> {
        n_ratios_scratch(x_t, x_0, self.vocab_size, self.domain, self.parallel, &mut Scratches::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(body: &[u32]) -> Sequence {
        Sequence::from_body(body).unwrap()
    }

    #[test]
    fn single_gap_target() {
        // b=1 a=2 g=3: bg inside bag
        let r = n_ratios(&seq(&[1, 3]), &seq(&[1, 2, 3]), 4, Domain::Exact).unwrap();
        assert_eq!(r.shape(), (3, 3));
        let nonzero: Vec<_> = r.ratios.entries().filter(|e| *e.2 != 0.0).map(|(i, c, &x)| (i, c, x)).collect();
        assert_eq!(nonzero, vec![(1, 1, 1.0)]);
        assert_eq!(r.grand_sum(), 1.0);
        assert_eq!(r.exact_identity_holds(), Some(true));
    }

    #[test]
    fn identical_pair_is_all_zero() {
        let x = seq(&[1, 2, 2, 1]);
        let r = n_ratios(&x, &x, 3, Domain::Exact).unwrap();
        assert!(r.ratios.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_state_target() {
        let r = n_ratios(&Sequence::bos_only(), &seq(&[1, 1]), 2, Domain::Exact).unwrap();
        assert_eq!(r.ratios[(0, 0)], 2.0);
        assert_eq!(r.grand_sum(), 2.0);
    }

    #[test]
    fn not_a_subsequence() {
        for d in [Domain::Exact, Domain::Log, Domain::LogF32, Domain::Auto] {
            assert_eq!(
                n_ratios(&seq(&[2, 1]), &seq(&[1, 2]), 3, d).unwrap_err(),
                DpError::NotASubsequence
            );
            assert_eq!(
                n_ratios(&seq(&[1, 1, 1]), &seq(&[1]), 3, d).unwrap_err(),
                DpError::NotASubsequence
            );
        }
    }

    #[test]
    fn token_outside_vocab() {
        assert!(matches!(
            n_ratios(&seq(&[]), &seq(&[5]), 3, Domain::Exact),
            Err(DpError::InvalidToken { id: 5, size: 3 })
        ));
    }

    #[test]
    fn auto_falls_back_to_log() {
        let x_0 = seq(&vec![1; 200]);
        let x_t = seq(&vec![1; 100]);
        assert_eq!(n_ratios(&x_t, &x_0, 2, Domain::Exact).unwrap_err(), DpError::Overflow);
        let r = n_ratios(&x_t, &x_0, 2, Domain::Auto).unwrap();
        assert_eq!(r.domain, Domain::Log);
        assert!((r.grand_sum() - 100.0).abs() <= 1e-6 * 100.0);
    }

    #[test]
    fn batch_errors_carry_index() {
        let pairs = vec![
            (seq(&[1]), seq(&[1, 2])),
            (seq(&[2, 1]), seq(&[1, 2])),
        ];
        match batched_n_ratios(&pairs, 3, Domain::Exact, false).unwrap_err() {
            DpError::InPair { index, source } => {
                assert_eq!(index, 1);
                assert_eq!(*source, DpError::NotASubsequence);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(batched_n_ratios(&[], 3, Domain::Exact, true).unwrap().is_empty());
    }

    fn pair_strategy() -> impl Strategy<Value = (Sequence, Sequence)> {
        proptest::collection::vec((1u32..4, any::<bool>()), 0..24).prop_map(|v| {
            let x_0: Vec<u32> = v.iter().map(|p| p.0).collect();
            let x_t: Vec<u32> = v.iter().filter(|p| p.1).map(|p| p.0).collect();
            (seq(&x_t), seq(&x_0))
        })
    }

    proptest! {
        #[test]
        fn grand_sum_is_deleted_count((x_t, x_0) in pair_strategy()) {
            let r = n_ratios(&x_t, &x_0, 4, Domain::Exact).unwrap();
            prop_assert_eq!(r.exact_identity_holds(), Some(true));
            let d = (x_0.len() - x_t.len()) as f64;
            prop_assert!((r.grand_sum() - d).abs() <= 1e-9 * d.max(1.0));
            prop_assert!(r.ratios.as_slice().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn log_matches_exact((x_t, x_0) in pair_strategy()) {
            let e = n_ratios(&x_t, &x_0, 4, Domain::Exact).unwrap();
            let l = n_ratios(&x_t, &x_0, 4, Domain::Log).unwrap();
            let total = e.exact.as_ref().unwrap().total as f64;
            prop_assert!((l.log_total.exp() - total).abs() <= 1e-9 * total);
            for (a, b) in e.ratios.as_slice().iter().zip(l.ratios.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }
        }

        #[test]
        fn batch_matches_sequential(pairs in proptest::collection::vec(pair_strategy(), 0..8)) {
            let seq_out: Vec<_> = pairs.iter().map(|(a, b)| n_ratios(a, b, 4, Domain::Exact).unwrap()).collect();
            prop_assert_eq!(&batched_n_ratios(&pairs, 4, Domain::Exact, true).unwrap(), &seq_out);
            prop_assert_eq!(&batched_n_ratios(&pairs, 4, Domain::Exact, false).unwrap(), &seq_out);
        }
    }
}
