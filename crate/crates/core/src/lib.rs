//! Deletion-insertion discrete diffusion over token sequences.
//!
//! The forward process deletes tokens independently until only the begin
//! marker is left; the reverse process inserts tokens gap by gap. Training
//! targets are exact subsequence-count ratios computed by dynamic programming.

pub mod dp;
pub mod error;
pub mod matrix;
pub mod objective;
pub mod oracle;
pub mod process;
pub mod sampler;
pub mod scorer;
pub mod seq;

pub use error::{Error, Result};
pub use matrix::GapMatrix;
pub use seq::{Sequence, Token, TokenizeMode, Vocab};
