use alloc::string::String;
use alloc::vec::Vec;

use crate::mdp::ValidationReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(ValidationReport),
    #[error("trajectory {0} does not end in a terminal transition")]
    Unterminated(String),
    #[error("malformed trajectory {id}: {reason}")]
    MalformedTrajectory { id: String, reason: String },
    #[error("value iteration did not converge: residual {residual:e} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: usize },
    #[error("states {0:?} do not terminate with probability 1")]
    NonTerminatingRegion(Vec<usize>),
    #[error("stale inputs: {0}")]
    StaleInputs(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("MDP generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("trajectory {index} still unterminated after {attempts} rollouts")]
    YieldTooLow { index: usize, attempts: usize },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("buffer `{0}` is empty")]
    EmptyBuffer(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at step {0}: non-finite loss")]
    Diverged(usize),
    #[error("dataset is not tabular: {0}")]
    NonTabularData(String),
    #[error("empty value row")]
    EmptyRow,
    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("state admits no secure distribution: caps sum to {cap_sum}")]
    DeadEndState { cap_sum: f64 },
    #[error("no trajectory satisfies the alignment window")]
    NoEligibleTrajectories,
    #[error("index {index} out of bounds for length {len}")]
    BadIndex { index: usize, len: usize },
}
