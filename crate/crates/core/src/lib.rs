//! Memory-efficient preprocessing for video moment retrieval over embedding
//! streams: structured visual compression, query-aware caption modulation,
//! query-guided captioning orchestration, interleaved sequence assembly, and
//! the usual retrieval metrics. Model inference sits behind a provider
//! contract so every mechanism here runs and tests at desk scale.

pub mod captions;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod modulation;
pub mod sequence;
pub mod svc;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
