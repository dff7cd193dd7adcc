use thiserror::Error;

use crate::grid::Formulation;

pub type Result<T> = std::result::Result<T, CascadeError>;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at node {position:?}")]
    NonFinite { position: Vec<f64> },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("negative Sobolev index s = {0}")]
    NegativeSobolev(f64),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error(
        "not supercritical: k = {k} >= n = {n} (pass an explicit override for critical-case runs)"
    )]
    NotSupercritical { k: f64, n: usize },

    #[error("unknown nonlinearity label `{0}`")]
    UnknownNonlinearity(String),

    #[error("nonlinearity check failed: {0}")]
    NonlinearityCheck(String),

    #[error("wrong formulation: expected {expected:?}, found {found:?}")]
    WrongFormulation {
        expected: Formulation,
        found: Formulation,
    },

    #[error("box-decay check failed: boundary modulus {boundary:.3e} exceeds {limit:.1e}")]
    BoxDecay { boundary: f64, limit: f64 },

    #[error("solver aborted at step {step} (t = {time}): {reason}")]
    SolverAbort {
        step: usize,
        time: f64,
        reason: String,
    },

    #[error("blowup suspected at step {step} (t = {time}): sup norm {sup:.3e}")]
    BlowupSuspected { step: usize, time: f64, sup: f64 },

    #[error("approaching lifespan: last good time {last_good_time}")]
    Lifespan { last_good_time: f64 },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
