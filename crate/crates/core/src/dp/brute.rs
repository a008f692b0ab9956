//! Enumeration references for subsequence counts. Exponential; tiny inputs only.

use std::collections::HashMap;

use super::DpError;
use crate::seq::{Sequence, Token};

pub const BRUTE_MAX_SUB: usize = 12;
pub const BRUTE_MAX_SEQ: usize = 14;

/// Number of strictly increasing index tuples `k_1 < ... < k_r` with
/// `seq[k_j] == sub[j]`, found by walking every such tuple.
pub fn brute_count(sub: &Sequence, seq: &Sequence) -> Result<u64, DpError> {
    brute_count_tokens(sub.tokens(), seq.tokens())
}

pub fn brute_count_tokens(sub: &[Token], seq: &[Token]) -> Result<u64, DpError> {
    if sub.len() > BRUTE_MAX_SUB {
        return Err(DpError::TooLarge {
            len: sub.len(),
            max: BRUTE_MAX_SUB,
        });
    }
    if seq.len() > BRUTE_MAX_SEQ {
        return Err(DpError::TooLarge {
            len: seq.len(),
            max: BRUTE_MAX_SEQ,
        });
    }
    fn walk(sub: &[Token], seq: &[Token], from: usize) -> u64 {
        let Some((&head, rest)) = sub.split_first() else {
            return 1;
        };
        (from..seq.len())
            .filter(|&k| seq[k] == head)
            .map(|k| walk(rest, seq, k + 1))
            .sum()
    }
    Ok(walk(sub, seq, 0))
}

/// Every subsequence of `seq` that keeps index 0, with its multiplicity,
/// built by visiting all `2^(len-1)` keep/drop masks.
pub fn enumerate_subsequences(seq: &Sequence, max_len: usize) -> Result<HashMap<Sequence, u64>, DpError> {
    if seq.len() > max_len {
        return Err(DpError::TooLarge {
            len: seq.len(),
            max: max_len,
        });
    }
    let body = seq.body_len();
    let mut out = HashMap::new();
    let mut kept = Vec::with_capacity(seq.len());
    for mask in 0u32..(1u32 << body) {
        kept.clear();
        kept.push(0);
        kept.extend((0..body).filter(|b| mask >> b & 1 == 1).map(|b| b + 1));
        *out.entry(seq.select(&kept)).or_insert(0) += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(body: &[u32]) -> Sequence {
        Sequence::from_body(body).unwrap()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(brute_count(&seq(&[1, 2, 3]), &seq(&[1, 2, 1, 3, 1, 2, 3])).unwrap(), 5);
        assert_eq!(brute_count(&seq(&[]), &seq(&[2, 2, 1])).unwrap(), 1);
        // aa in aba
        assert_eq!(brute_count(&seq(&[1, 1]), &seq(&[1, 2, 1])).unwrap(), 1);
        assert_eq!(brute_count(&seq(&[1, 1, 1]), &seq(&[1, 1])).unwrap(), 0);
    }

    #[test]
    fn bounds_are_enforced() {
        let long = seq(&[1; 14]);
        assert!(matches!(brute_count(&seq(&[1]), &long), Err(DpError::TooLarge { .. })));
        assert!(matches!(brute_count(&long, &seq(&[1])), Err(DpError::TooLarge { .. })));
    }

    #[test]
    fn enumeration_multiplicities() {
        let m = enumerate_subsequences(&seq(&[1, 1]), 10).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[&seq(&[1])], 2);
        let m = enumerate_subsequences(&seq(&[1, 2, 3, 4]), 10).unwrap();
        assert_eq!(m.len(), 16);
        assert!(m.values().all(|&c| c == 1));
    }
}
