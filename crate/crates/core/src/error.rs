//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector that must be nonzero (similarity input, normalization input) was zero.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An operation that requires at least one element got none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Query text is empty after trimming.
    #[error("empty query")]
    EmptyQuery,

    /// A caption could not be mapped to a frame.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// A provider call failed.
    #[error("provider error{}: {message}", segment_label(.segment_id))]
    Provider {
        segment_id: Option<usize>,
        message: String,
    },

    /// The pre-computed caption store is absent or stale for the requested video.
    #[error("caption store missing or stale: {0}")]
    StoreMissing(String),

    /// Assembly would exceed the vector-slot budget.
    #[error("memory budget exceeded: {overflow} slot(s) over the limit of {max}")]
    BudgetExceeded { overflow: usize, max: usize },

    /// Frame timestamps are not strictly increasing (or otherwise out of order).
    #[error("ordering error: {0}")]
    Ordering(String),

    /// Invalid configuration value or unknown strategy/flag value.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file or wire payload could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

fn segment_label(id: &Option<usize>) -> String {
    match id {
        Some(s) => format!(" (segment {s})"),
        None => String::new(),
    }
}

impl Error {
    /// Stable category name, used by the CLI to tag error messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate-input",
            Error::DimensionMismatch { .. } => "dimension",
            Error::NonFinite(_) => "numeric",
            Error::EmptyInput(_) => "empty-input",
            Error::EmptyQuery => "empty-query",
            Error::Pairing(_) => "pairing",
            Error::Provider { .. } => "provider",
            Error::StoreMissing(_) => "store-missing",
            Error::BudgetExceeded { .. } => "budget",
            Error::Ordering(_) => "ordering",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}
