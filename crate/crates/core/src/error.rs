use std::path::PathBuf;

use crate::trainer::TrainingCurve;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate denominator in the {equation} rate term")]
    DegenerateDenominator { equation: &'static str },

    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("run {run_id} blew up on {retries} consecutive attempts")]
    TooManyRetries { run_id: u64, retries: u32 },

    #[error("run {run_id} has {rows} rows, need at least {required}")]
    RunTooShort { run_id: u64, rows: usize, required: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: &'static str },

    #[error("header field `{field}` is invalid: {detail}")]
    DimMismatch { field: &'static str, detail: String },

    #[error("non-finite gradient{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFiniteGradient { epoch: Option<u64> },

    #[error("evaluation target has zero norm")]
    ZeroTargetNorm,

    #[error("did not reach target error within {max_epochs} epochs")]
    DidNotConverge { max_epochs: u64, curve: Box<TrainingCurve> },

    #[error("timed block of {block_ns} ns is under 100x the clock resolution ({resolution_ns} ns)")]
    ClockResolutionTooCoarse { block_ns: u128, resolution_ns: u128 },

    #[error("timed prediction differs from the untimed forward pass")]
    TimedOutputMismatch,

    #[error("corpus generation is running in this process; refusing to benchmark")]
    GenerationActive,

    #[error("missing checkpoint for lookahead {0}")]
    MissingCheckpoint(u32),

    #[error("schema mismatch in {path}: {detail}")]
    SchemaMismatch { path: PathBuf, detail: String },

    #[error("parse error in {path} line {line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
