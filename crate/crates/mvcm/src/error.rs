//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset validation, estimation and inference routines.
#[derive(Debug, Error)]
pub enum MvcmError {
    #[error("grid not increasing at index {index}: {prev} >= {next}")]
    GridNotIncreasing { index: usize, prev: f64, next: f64 },

    #[error("grid point {value} at index {index} outside [0, 1]")]
    GridOutOfRange { index: usize, value: f64 },

    #[error("grid too short: {len} points (need at least {min})")]
    GridTooShort { len: usize, min: usize },

    #[error("non-finite response value at subject {subject}, response {response}, grid index {grid_index}")]
    NonFiniteValue {
        subject: usize,
        response: usize,
        grid_index: usize,
    },

    #[error("rank-deficient covariates: rank {rank} < {p} columns")]
    RankDeficientCovariates { rank: usize, p: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid bandwidth {value}: must be positive and finite")]
    InvalidBandwidth { value: f64 },

    #[error("degenerate kernel window at s = {location}: {found} in-window points, need {needed}")]
    DegenerateWindow {
        location: f64,
        needed: usize,
        found: usize,
    },

    #[error("singular local system at s = {location} (response {response})")]
    SingularSystem { location: f64, response: usize },

    #[error("bandwidth selection failed for response {response}: {reason}")]
    BandwidthSelection { response: usize, reason: String },

    #[error("degrees of freedom exhausted: n = {n} subjects with p = {p} covariates")]
    DegreesOfFreedom { n: usize, p: usize },

    #[error("constraint matrix rank-deficient: rank {rank} < {rows} rows")]
    RankDeficientConstraint { rank: usize, rows: usize },

    #[error("hypothesis mismatch: {0}")]
    HypothesisMismatch(String),

    #[error("bias estimate required but not attached to the coefficient fit")]
    MissingBias,

    #[error("bootstrap aborted: {aborted} of {total} replicates failed ({reason})")]
    BootstrapAborted {
        aborted: usize,
        total: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, MvcmError>;
