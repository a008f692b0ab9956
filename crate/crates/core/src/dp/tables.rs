//! Prefix/suffix subsequence-count tables and the all-insertion count grid.

use rayon::prelude::*;

use super::semiring::CountValue;
use super::DpError;
use crate::matrix::GapMatrix;
use crate::seq::Token;

/// Below this many rows a column update is not worth splitting across threads.
const PAR_MIN_ROWS: usize = 1024;
const PAR_CHUNK: usize = 512;

/// `(n+1) x (m+1)` grid over `x_t` rows and `x_0` columns, stored column by
/// column so a fixed `j` is one contiguous run over `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpTable<C> {
    n: usize,
    m: usize,
    data: Vec<C>,
}

/// Cell `(i, j)` holds `N(x_t[..i], x_0[..j])`.
pub type PrefixTable<C> = DpTable<C>;
/// Cell `(i, j)` holds `N(x_t[i..], x_0[j..])`.
pub type SuffixTable<C> = DpTable<C>;

impl<C: CountValue> DpTable<C> {
    /// Reuses `buf` as storage; it only grows, so a buffer sized for the
    /// largest pair of a batch is never reallocated.
    fn with_buffer(n: usize, m: usize, mut buf: Vec<C>) -> Self {
        buf.clear();
        buf.resize((n + 1) * (m + 1), C::zero());
        DpTable { n, m, data: buf }
    }

    pub fn into_buffer(self) -> Vec<C> {
        self.data
    }

    /// Length of the row sequence (`x_t`).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Length of the column sequence (`x_0`).
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C {
        self.data[j * (self.n + 1) + i]
    }

    /// Column `j` as a contiguous slice over `i = 0..=n`.
    pub fn column(&self, j: usize) -> &[C] {
        &self.data[j * (self.n + 1)..(j + 1) * (self.n + 1)]
    }
}

/// Fills one column from its already-finished neighbour `prev`.
fn column_step<C: CountValue>(
    cur: &mut [C],
    prev: &[C],
    x_t: &[Token],
    y: Token,
    suffix: bool,
    parallel: bool,
) -> Result<(), DpError> {
    let n = x_t.len();
    let cell = |i: usize| -> Result<C, DpError> {
        if suffix {
            if i == n {
                return Ok(C::one());
            }
            if x_t[i] == y {
                prev[i].add(prev[i + 1])
            } else {
                Ok(prev[i])
            }
        } else {
            if i == 0 {
                return Ok(C::one());
            }
            if x_t[i - 1] == y {
                prev[i].add(prev[i - 1])
            } else {
                Ok(prev[i])
            }
        }
    };
    if parallel && cur.len() >= PAR_MIN_ROWS {
        cur.par_chunks_mut(PAR_CHUNK).enumerate().try_for_each(|(k, chunk)| {
            for (o, c) in chunk.iter_mut().enumerate() {
                *c = cell(k * PAR_CHUNK + o)?;
            }
            Ok(())
        })
    } else {
        for (i, c) in cur.iter_mut().enumerate() {
            *c = cell(i)?;
        }
        Ok(())
    }
}

/// Prefix recurrence `P(i,j) = P(i,j-1) + [x_t[i-1] == x_0[j-1]] P(i-1,j-1)`.
pub fn prefix_table<C: CountValue>(x_t: &[Token], x_0: &[Token], parallel: bool) -> Result<PrefixTable<C>, DpError> {
    prefix_table_in(x_t, x_0, parallel, Vec::new())
}

pub(crate) fn prefix_table_in<C: CountValue>(
    x_t: &[Token],
    x_0: &[Token],
    parallel: bool,
    buf: Vec<C>,
) -> Result<PrefixTable<C>, DpError> {
    let (n, m) = (x_t.len(), x_0.len());
    let mut t = DpTable::<C>::with_buffer(n, m, buf);
    let h = n + 1;
    t.data[0] = C::one();
    for j in 1..=m {
        let (done, rest) = t.data.split_at_mut(j * h);
        column_step(&mut rest[..h], &done[(j - 1) * h..], x_t, x_0[j - 1], false, parallel)?;
    }
    Ok(t)
}

/// Suffix recurrence `S(i,j) = S(i,j+1) + [x_t[i] == x_0[j]] S(i+1,j+1)`.
pub fn suffix_table<C: CountValue>(x_t: &[Token], x_0: &[Token], parallel: bool) -> Result<SuffixTable<C>, DpError> {
    suffix_table_in(x_t, x_0, parallel, Vec::new())
}

pub(crate) fn suffix_table_in<C: CountValue>(
    x_t: &[Token],
    x_0: &[Token],
    parallel: bool,
    buf: Vec<C>,
) -> Result<SuffixTable<C>, DpError> {
    let (n, m) = (x_t.len(), x_0.len());
    let mut t = DpTable::<C>::with_buffer(n, m, buf);
    let h = n + 1;
    t.data[m * h + n] = C::one();
    for j in (0..m).rev() {
        let (head, tail) = t.data.split_at_mut((j + 1) * h);
        column_step(&mut head[j * h..], &tail[..h], x_t, x_0[j], true, parallel)?;
    }
    Ok(t)
}

/// `N(x_t, x_0)` read from a prefix table.
pub fn total_count<C: CountValue>(prefix: &PrefixTable<C>) -> C {
    prefix.get(prefix.n(), prefix.m())
}

/// Grid of `N(Ins(x_t, i, v), x_0)` from prebuilt tables.
///
/// Inserting `v` after position `i` and matching it to `x_0[j]` splits every
/// embedding into `x_t[..=i]` inside `x_0[..j]` and `x_t[i+1..]` inside
/// `x_0[j+1..]`, so the entry is `sum_j [x_0[j] == v] P(i+1, j) S(i+1, j+1)`.
/// Only `i+1 <= j <= i + m - n` can be nonzero. Products are accumulated into
/// a dense grid in increasing `j`, which fixes the reduction order.
pub fn insertion_counts_from<C: CountValue>(
    x_t: &[Token],
    x_0: &[Token],
    prefix: &PrefixTable<C>,
    suffix: &SuffixTable<C>,
    vocab_size: usize,
) -> Result<GapMatrix<C>, DpError> {
    let (n, m) = (x_t.len(), x_0.len());
    let cols = vocab_size.saturating_sub(1);
    let mut out = GapMatrix::filled(n, cols, C::zero());
    if m <= n {
        return Ok(out);
    }
    for i in 0..n {
        for j in (i + 1)..=(i + m - n) {
            let Some(c) = x_0[j].column() else { continue };
            if c >= cols {
                return Err(DpError::InvalidToken {
                    id: x_0[j].id(),
                    size: vocab_size,
                });
            }
            let p = prefix.get(i + 1, j);
            if p.is_zero() {
                continue;
            }
            let s = suffix.get(i + 1, j + 1);
            if s.is_zero() {
                continue;
            }
            let cell = &mut out[(i, c)];
            *cell = cell.add(p.mul(s)?)?;
        }
    }
    Ok(out)
}

/// Builds both tables (concurrently when `parallel`) and the insertion grid.
pub fn insertion_counts<C: CountValue>(
    x_t: &[Token],
    x_0: &[Token],
    vocab_size: usize,
    parallel: bool,
) -> Result<(GapMatrix<C>, C), DpError> {
    let (p, s) = if parallel {
        rayon::join(
            || prefix_table::<C>(x_t, x_0, true),
            || suffix_table::<C>(x_t, x_0, true),
        )
    } else {
        (prefix_table::<C>(x_t, x_0, false), suffix_table::<C>(x_t, x_0, false))
    };
    let (p, s) = (p?, s?);
    let total = total_count(&p);
    Ok((insertion_counts_from(x_t, x_0, &p, &s, vocab_size)?, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::semiring::LogCount;
    use crate::seq::Sequence;

    fn seq(body: &[u32]) -> Sequence {
        Sequence::from_body(body).unwrap()
    }

    // b=1 a=2 g=3
    #[test]
    fn bag_in_babgbag() {
        let x_t = seq(&[1, 2, 3]);
        let x_0 = seq(&[1, 2, 1, 3, 1, 2, 3]);
        let p = prefix_table::<u64>(x_t.tokens(), x_0.tokens(), false).unwrap();
        let s = suffix_table::<u64>(x_t.tokens(), x_0.tokens(), false).unwrap();
        assert_eq!(total_count(&p), 5);
        assert_eq!(s.get(0, 0), 5);
    }

    #[test]
    fn table_boundaries() {
        let x_t = seq(&[1, 2]);
        let x_0 = seq(&[2, 1, 2, 2]);
        let p = prefix_table::<u64>(x_t.tokens(), x_0.tokens(), false).unwrap();
        let s = suffix_table::<u64>(x_t.tokens(), x_0.tokens(), false).unwrap();
        for j in 0..=p.m() {
            assert_eq!(p.get(0, j), 1);
            assert_eq!(s.get(p.n(), j), 1);
        }
        for i in 0..=p.n() {
            for j in 1..=p.m() {
                assert!(p.get(i, j) >= p.get(i, j - 1));
            }
        }
    }

    #[test]
    fn a_in_aaa() {
        let x_t = seq(&[1]);
        let x_0 = seq(&[1, 1, 1]);
        let p = prefix_table::<u64>(x_t.tokens(), x_0.tokens(), false).unwrap();
        assert_eq!(total_count(&p), 3);
        let l = prefix_table::<LogCount<f64>>(x_t.tokens(), x_0.tokens(), false).unwrap();
        assert!((total_count(&l).0.exp() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn insertion_grid_for_multiplicity_example() {
        // x_t = bag, x_0 = baag: inserting `a` after b or after the first a.
        let x_t = seq(&[1, 2, 3]);
        let x_0 = seq(&[1, 2, 2, 3]);
        let (g, total) = insertion_counts::<u64>(x_t.tokens(), x_0.tokens(), 4, false).unwrap();
        assert_eq!(total, 2);
        let a = Token(2).column().unwrap();
        assert_eq!(g[(1, a)], 1);
        assert_eq!(g[(2, a)], 1);
        assert_eq!(g.as_slice().iter().sum::<u64>(), 2);
    }

    #[test]
    fn parallel_column_steps_match() {
        let x_0: Vec<u32> = (0..1500).map(|k| 1 + (k * 7 % 3) as u32).collect();
        let x_t: Vec<u32> = x_0.iter().step_by(2).copied().collect();
        let (x_0, x_t) = (seq(&x_0), seq(&x_t));
        let a = prefix_table::<LogCount<f64>>(x_t.tokens(), x_0.tokens(), false).unwrap();
        let b = prefix_table::<LogCount<f64>>(x_t.tokens(), x_0.tokens(), true).unwrap();
        assert_eq!(a, b);
    }
}
