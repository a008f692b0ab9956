//! Binary checkpoint format. All integers and floats are little endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DLINSCKP"
//! 8       4     version (u32) = 1
//! 12      1     mode (u8): 0 = dise, 1 = dice
//! 13      4     vocab size including the begin marker (u32)
//! 17      4     K, target length in fixed-length mode, 0 otherwise (u32)
//! 21      4     time buckets (u32)
//! 25      4     length buckets (u32)
//! 29      8     parameter count P (u64)
//! 37      8*P   parameters (f64)
//! ..      8     completed training steps (u64)
//! ..      1     optimizer state present (u8)
//! if present:
//!         1     optimizer (u8): 0 = sgd, 1 = adam
//!         8     optimizer step count (u64)
//!         8     moment length M (u64), 0 for sgd
//!         8*M   first moments (f64)
//!         8*M   second moments (f64)
//! ```

use std::fs;
use std::path::Path;

use super::{OptimizerKind, OptimizerState, ScorerError, ScorerParams, ScorerShape};
use crate::objective::LossMode;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLINSCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ScorerParams,
    pub steps: u64,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(params: ScorerParams) -> Self {
        Checkpoint {
            params,
            steps: 0,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sh = &self.params.shape;
        let mut b = Vec::with_capacity(64 + 8 * self.params.values.len());
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.push(match sh.mode {
            LossMode::Dise => 0,
            LossMode::Dice => 1,
        });
        for x in [sh.vocab_size, sh.k, sh.time_buckets, sh.len_buckets] {
            b.extend_from_slice(&(x as u32).to_le_bytes());
        }
        put_f64s(&mut b, &self.params.values);
        b.extend_from_slice(&self.steps.to_le_bytes());
        match &self.optimizer {
            None => b.push(0),
            Some(o) => {
                b.push(1);
                b.push(match o.kind {
                    OptimizerKind::Sgd => 0,
                    OptimizerKind::Adam => 1,
                });
                b.extend_from_slice(&o.steps.to_le_bytes());
                put_f64s(&mut b, &o.m);
                for x in &o.v {
                    b.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ScorerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(ScorerError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ScorerError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mode = match r.u8()? {
            0 => LossMode::Dise,
            1 => LossMode::Dice,
            m => return Err(ScorerError::Corrupt(format!("unknown mode byte {m}"))),
        };
        let shape = ScorerShape {
            mode,
            vocab_size: r.u32()? as usize,
            k: r.u32()? as usize,
            time_buckets: r.u32()? as usize,
            len_buckets: r.u32()? as usize,
        };
        shape.validate()?;
        let values = r.f64s()?;
        if values.len() != shape.param_count() {
            return Err(ScorerError::ShapeMismatch(format!(
                "{} parameters stored, {shape} needs {}",
                values.len(),
                shape.param_count()
            )));
        }
        let steps = r.u64()?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let kind = match r.u8()? {
                    0 => OptimizerKind::Sgd,
                    1 => OptimizerKind::Adam,
                    k => return Err(ScorerError::Corrupt(format!("unknown optimizer byte {k}"))),
                };
                let opt_steps = r.u64()?;
                let m = r.f64s()?;
                let v = (0..m.len()).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                Some(OptimizerState {
                    kind,
                    steps: opt_steps,
                    m,
                    v,
                })
            }
            f => return Err(ScorerError::Corrupt(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(ScorerError::Corrupt("trailing bytes".into()));
        }
        Ok(Checkpoint {
            params: ScorerParams { shape, values },
            steps,
            optimizer,
        })
    }
}

fn put_f64s(b: &mut Vec<u8>, xs: &[f64]) {
    b.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ScorerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ScorerError::Corrupt(format!("unexpected end of file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ScorerError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ScorerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ScorerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ScorerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, ScorerError> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(ScorerError::Corrupt(format!("array of {n} values does not fit")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn save(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ScorerError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, ScorerError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// [`load`], rejecting checkpoints built for a different vocabulary size.
pub fn load_for_vocab(path: impl AsRef<Path>, vocab_size: usize) -> Result<Checkpoint, ScorerError> {
    let ck = load(path)?;
    if ck.params.shape.vocab_size != vocab_size {
        return Err(ScorerError::ShapeMismatch(format!(
            "checkpoint vocabulary has {} ids, expected {vocab_size}",
            ck.params.shape.vocab_size
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Optimizer;

    fn sample() -> Checkpoint {
        let mut p = ScorerParams::zeros(ScorerShape::dise(4)).unwrap();
        for (k, v) in p.values.iter_mut().enumerate() {
            *v = (k as f64).sin() * 1e3 + f64::EPSILON * k as f64;
        }
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, p.values.len());
        let g = p.values.clone();
        opt.step(&mut p.values, &g);
        Checkpoint {
            params: p,
            steps: 17,
            optimizer: Some(opt.state),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for ck in [sample(), Checkpoint::new(ScorerParams::zeros(ScorerShape::dice(5, 7)).unwrap())] {
            save(&ck, &path).unwrap();
            let back = load(&path).unwrap();
            assert_eq!(back.to_bytes(), ck.to_bytes());
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn header_fields() {
        let b = sample().to_bytes();
        assert_eq!(&b[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(b[12], 0);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 4);
    }

    #[test]
    fn wrong_version() {
        let mut b = sample().to_bytes();
        b[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&b),
            Err(ScorerError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(Checkpoint::from_bytes(b"nonsense"), Err(ScorerError::BadMagic)));
        let b = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 3]), Err(ScorerError::Corrupt(_))));
    }

    #[test]
    fn vocab_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&sample(), &path).unwrap();
        assert!(matches!(load_for_vocab(&path, 9), Err(ScorerError::ShapeMismatch(_))));
        assert!(load_for_vocab(&path, 4).is_ok());
    }
}
