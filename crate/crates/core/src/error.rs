use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no strictly increasing schedule exists in the search grid")]
    NoFeasibleSchedule,

    #[error("degenerate mel filterbank: filter {row} has no support at this FFT resolution")]
    DegenerateFilterbank { row: usize },

    #[error("segment label `{0}` not present in statistics table")]
    MissingLabel(String),

    #[error("numerical divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("sinkhorn did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("frame count mismatch: {left} vs {right} (no time alignment is performed)")]
    Alignment { left: usize, right: usize },

    #[error("format error in {chunk}: {message}")]
    Format { chunk: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(chunk: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            chunk: chunk.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::InvalidInput(_) => 3,
            Error::Shape { .. } => 4,
            Error::NoFeasibleSchedule => 5,
            Error::DegenerateFilterbank { .. } => 6,
            Error::MissingLabel(_) => 7,
            Error::Divergence { .. } => 8,
            Error::ConvergenceFailure { .. } => 9,
            Error::Alignment { .. } => 10,
            Error::Format { .. } => 11,
            Error::Contract(_) => 12,
            Error::Config(_) => 13,
            Error::Io(_) => 14,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { context, expected, got })
    }
}
