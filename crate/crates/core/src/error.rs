use thiserror::Error;

use crate::dp::DpError;
use crate::objective::ObjectiveError;
use crate::oracle::OracleError;
use crate::process::ProcessError;
use crate::sampler::SamplerError;
use crate::scorer::ScorerError;
use crate::seq::SeqError;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
