use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("prior covariance not PD")]
    PriorNotPositiveDefinite,
    #[error("point {0} outside the domain [0, 1]")]
    Domain(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("signal length {0} is not divisible by 8; resample it first")]
    LengthNotDivisible(usize),
    #[error("need at least 2 keypoints per signal, got {0}; use a larger ratio")]
    TooFewKeypoints(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
