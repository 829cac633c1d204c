//! Core vector types and similarity primitives shared by every other module.
//!
//! All similarity operations take raw (unnormalized) embeddings and normalize
//! internally, so callers never track normalization state. Zero vectors are
//! rejected rather than silently mapped to zero similarity: a zero embedding
//! indicates an upstream provider failure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-dimension real vector; the unit of frame, caption, and query representation.
///
/// Invariants enforced at construction: dimension >= 1 and every entry finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding has dimension 0".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {bad}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise scaling; the result may be the zero vector when `s == 0`.
    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

fn check_nonzero(v: &EmbeddingVector, what: &str) -> Result<()> {
    if v.is_zero() {
        return Err(Error::DegenerateInput(format!("{what} is the zero vector")));
    }
    Ok(())
}

/// Cosine similarity of two raw vectors, clamped to [-1, 1].
///
/// Computed as dot(a,b) / sqrt(dot(a,a) * dot(b,b)); the clamp guards the
/// threshold comparisons downstream against floating-point drift.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a, b)?;
    check_nonzero(a, "left input")?;
    check_nonzero(b, "right input")?;
    let dot = a.dot(b)?;
    let denom = (a.dot(a)? * b.dot(b)?).sqrt();
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Rescale `a` to unit L2 norm, preserving direction.
pub fn l2_normalize(a: &EmbeddingVector) -> Result<EmbeddingVector> {
    check_nonzero(a, "input")?;
    let n = a.norm();
    Ok(a.scale(1.0 / n))
}

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_sec: f64,
    pub end_sec: f64,
}

impl TimeSpan {
    pub fn new(start_sec: f64, end_sec: f64) -> Result<Self> {
        if !start_sec.is_finite() || !end_sec.is_finite() {
            return Err(Error::NonFinite("time span bound".into()));
        }
        if start_sec > end_sec {
            return Err(Error::Ordering(format!(
                "span start {start_sec} exceeds end {end_sec}"
            )));
        }
        Ok(Self { start_sec, end_sec })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_sec <= t && t <= self.end_sec
    }

    /// Smallest span covering both inputs.
    pub fn union(&self, other: &TimeSpan) -> TimeSpan {
        TimeSpan {
            start_sec: self.start_sec.min(other.start_sec),
            end_sec: self.end_sec.max(other.end_sec),
        }
    }
}

/// One timestamped frame embedding. After compression a record may carry a
/// `merged_span` covering every source frame folded into it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub timestamp: f64,
    pub embedding: EmbeddingVector,
    pub merged_span: Option<TimeSpan>,
}

impl FrameRecord {
    pub fn new(frame_index: usize, timestamp: f64, embedding: EmbeddingVector) -> Result<Self> {
        let rec = Self {
            frame_index,
            timestamp,
            embedding,
            merged_span: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_span(mut self, span: TimeSpan) -> Result<Self> {
        self.merged_span = Some(span);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(Error::NonFinite(format!(
                "timestamp {} of frame {}",
                self.timestamp, self.frame_index
            )));
        }
        if let Some(span) = &self.merged_span {
            if !span.contains(self.timestamp) {
                return Err(Error::Ordering(format!(
                    "timestamp {} of frame {} outside merged span [{}, {}]",
                    self.timestamp, self.frame_index, span.start_sec, span.end_sec
                )));
            }
        }
        Ok(())
    }

    /// Time extent this record stands for: its merged span when present,
    /// otherwise the instant of its timestamp.
    pub fn extent(&self) -> TimeSpan {
        self.merged_span.unwrap_or(TimeSpan {
            start_sec: self.timestamp,
            end_sec: self.timestamp,
        })
    }
}

/// Ordered frame stream with its video duration.
///
/// Invariants: timestamps strictly increasing, every timestamp <= duration,
/// all embeddings share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<FrameRecord>,
    duration: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<FrameRecord>, duration: f64) -> Result<Self> {
        if !duration.is_finite() || duration < 0.0 {
            return Err(Error::NonFinite(format!("duration {duration}")));
        }
        let mut dim = None;
        for (i, f) in frames.iter().enumerate() {
            f.validate()?;
            if f.timestamp > duration {
                return Err(Error::Ordering(format!(
                    "timestamp {} of frame {} exceeds duration {duration}",
                    f.timestamp, f.frame_index
                )));
            }
            match dim {
                None => dim = Some(f.embedding.dim()),
                Some(d) if d != f.embedding.dim() => {
                    return Err(Error::DimensionMismatch {
                        left: d,
                        right: f.embedding.dim(),
                    });
                }
                _ => {}
            }
            if i > 0 && frames[i - 1].timestamp >= f.timestamp {
                return Err(Error::Ordering(format!(
                    "timestamps not strictly increasing at frame {}",
                    f.frame_index
                )));
            }
        }
        Ok(Self { frames, duration })
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Embedding dimension, or None for an empty sequence.
    pub fn dim(&self) -> Option<usize> {
        self.frames.first().map(|f| f.embedding.dim())
    }
}
