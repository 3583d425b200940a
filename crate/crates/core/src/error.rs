use thiserror::Error;

use crate::harness::SweepReport;
use crate::relaxed::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must have an even number of points per axis, at least 4 (got {0})")]
    InvalidGrid(usize),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field `{0}` contains a non-finite value")]
    NonFinite(&'static str),

    #[error("derivative order {order} exceeds the configured maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("stress matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),

    #[error("stress matrix is not traceless (max trace {0:e})")]
    NotTraceless(f64),

    #[error("state leaves the admissible region: `{field}` margin {margin:e}")]
    OutsideStateSpace { field: &'static str, margin: f64 },

    #[error("time step {dt:e} exceeds the stability limit {dt_max:e}")]
    TimeStep { dt: f64, dt_max: f64 },

    #[error("velocity field is not divergence-free (L2 divergence {0:e})")]
    NotDivergenceFree(f64),

    #[error("simulation aborted at step {step} (t = {t}): {source}")]
    Aborted {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
        partial: Box<Trajectory>,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("sweep aborted at epsilon = {epsilon}: {source}")]
    SweepAborted {
        epsilon: f64,
        #[source]
        source: Box<Error>,
        partial: Box<SweepReport>,
    },
}
