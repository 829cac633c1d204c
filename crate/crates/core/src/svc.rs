//! Structured visual compression: a sequential anchor walk that detects
//! redundant frame pairs by cosine similarity and folds each pair through a
//! rank-k truncated SVD of the stacked 2xD matrix, keeping the row mean.
//!
//! The SVD of the two-row stack is computed in closed form from the 2x2 Gram
//! matrix M * M^T, so each merge costs O(D) with no general-purpose SVD
//! routine involved.

use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_similarity, EmbeddingVector, FrameSequence};
use crate::error::{Error, Result};

/// Anchor-update rule applied after a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorUpdate {
    /// The compressed embedding becomes the running anchor, so plateaus of
    /// near-duplicates collapse chain-wise.
    #[default]
    Compressed,
    /// The anchor stays frozen at the original retained frame; kept for the
    /// ablation harness.
    Original,
}

/// Compression parameters.
///
/// `theta` in [-1, 1] is the meaningful range; values above 1 disable merging
/// entirely and values below -1 force every comparison to merge, both of
/// which the degenerate-sweep tests rely on. `rank_k` must be 1 or 2; with
/// only two stacked rows, k = 2 reconstructs the pair exactly and the merge
/// degenerates to plain averaging, so k = 1 is the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SvcConfig {
    pub theta: f64,
    pub rank_k: usize,
    pub anchor_update: AnchorUpdate,
}

impl SvcConfig {
    pub fn new(theta: f64, rank_k: usize) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Config(format!("theta must be finite, got {theta}")));
        }
        if rank_k != 1 && rank_k != 2 {
            return Err(Error::Config(format!(
                "rank_k must be 1 or 2, got {rank_k}"
            )));
        }
        Ok(Self {
            theta,
            rank_k,
            anchor_update: AnchorUpdate::default(),
        })
    }

    pub fn with_anchor_update(mut self, rule: AnchorUpdate) -> Self {
        self.anchor_update = rule;
        self
    }
}

impl Default for SvcConfig {
    fn default() -> Self {
        Self {
            theta: 0.95,
            rank_k: 1,
            anchor_update: AnchorUpdate::default(),
        }
    }
}

/// Two equal-dimension rows: row 0 the anchor, row 1 the incoming frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedPair {
    rows: [EmbeddingVector; 2],
}

impl StackedPair {
    pub fn new(anchor: EmbeddingVector, frame: EmbeddingVector) -> Result<Self> {
        if anchor.dim() != frame.dim() {
            return Err(Error::DimensionMismatch {
                left: anchor.dim(),
                right: frame.dim(),
            });
        }
        Ok(Self {
            rows: [anchor, frame],
        })
    }

    pub fn anchor(&self) -> &EmbeddingVector {
        &self.rows[0]
    }

    pub fn frame(&self) -> &EmbeddingVector {
        &self.rows[1]
    }
}

/// One merge event: which slot absorbed which frame, at what similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergeEvent {
    pub anchor_index: usize,
    pub absorbed_index: usize,
    pub similarity: f64,
}

/// Observability record for a compression run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub input_count: usize,
    pub output_count: usize,
    pub merges: Vec<MergeEvent>,
    /// Sum of squared discarded singular values over all merges.
    pub total_reconstruction_error: f64,
}

impl CompressionReport {
    /// Single-line JSON form for the benchmark harness.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }
}

/// Best rank-k Frobenius approximation of the stacked pair, plus the
/// discarded energy sum_{j>k} sigma_j^2.
///
/// For k = 1 the top left-singular direction is the dominant eigenvector of
/// the 2x2 Gram matrix; projecting both rows onto it gives the approximation.
/// For k = 2 the pair is reproduced exactly with zero discarded energy.
pub fn truncated_svd_rank_k(m: &StackedPair, k: usize) -> Result<(StackedPair, f64)> {
    if k != 1 && k != 2 {
        return Err(Error::Config(format!("rank k must be 1 or 2, got {k}")));
    }
    if k == 2 {
        return Ok((m.clone(), 0.0));
    }

    let a = m.anchor();
    let b = m.frame();
    let p = a.dot(a)?;
    let q = b.dot(b)?;
    let r = a.dot(b)?;
    if !(p.is_finite() && q.is_finite() && r.is_finite()) {
        return Err(Error::NonFinite("Gram matrix entry overflowed".into()));
    }

    // Eigenvalues of [[p, r], [r, q]]; lambda_1 >= lambda_2 >= 0 are the
    // squared singular values.
    let disc = ((p - q) * (p - q) + 4.0 * r * r).sqrt();
    let lambda1 = 0.5 * ((p + q) + disc);
    let lambda2 = (0.5 * ((p + q) - disc)).max(0.0);

    // Top eigenvector: (r, lambda1 - p) and (lambda1 - q, r) are both valid;
    // take the larger to dodge cancellation. Both vanish only when the Gram
    // matrix is a multiple of the identity, where every direction is equally
    // dominant; (1, 0) keeps the anchor row in that case.
    let cand1 = (r, lambda1 - p);
    let cand2 = (lambda1 - q, r);
    let n1 = (cand1.0 * cand1.0 + cand1.1 * cand1.1).sqrt();
    let n2 = (cand2.0 * cand2.0 + cand2.1 * cand2.1).sqrt();
    let (u0, u1) = if n1 >= n2 && n1 > 0.0 {
        (cand1.0 / n1, cand1.1 / n1)
    } else if n2 > 0.0 {
        (cand2.0 / n2, cand2.1 / n2)
    } else {
        (1.0, 0.0)
    };

    // w = u^T M; approximation rows are u_i * w.
    let w: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| u0 * x + u1 * y)
        .collect();
    let row0 = EmbeddingVector::new(w.iter().map(|v| u0 * v).collect())?;
    let row1 = EmbeddingVector::new(w.iter().map(|v| u1 * v).collect())?;
    Ok((StackedPair::new(row0, row1)?, lambda2))
}

/// Merge one redundant pair: rank-k truncation of the stacked pair, then the
/// row mean as the compressed representation.
pub fn compress_pair(
    anchor: &EmbeddingVector,
    frame: &EmbeddingVector,
    cfg: &SvcConfig,
) -> Result<EmbeddingVector> {
    Ok(compress_pair_with_energy(anchor, frame, cfg)?.0)
}

fn compress_pair_with_energy(
    anchor: &EmbeddingVector,
    frame: &EmbeddingVector,
    cfg: &SvcConfig,
) -> Result<(EmbeddingVector, f64)> {
    if anchor.is_zero() {
        return Err(Error::DegenerateInput("anchor is the zero vector".into()));
    }
    if frame.is_zero() {
        return Err(Error::DegenerateInput("frame is the zero vector".into()));
    }
    let stacked = StackedPair::new(anchor.clone(), frame.clone())?;
    let (approx, energy) = truncated_svd_rank_k(&stacked, cfg.rank_k)?;
    let mean = approx.anchor().add(approx.frame())?.scale(0.5);
    Ok((mean, energy))
}

/// Walk the sequence in order, folding each frame whose similarity to the
/// current anchor strictly exceeds `theta` into the anchor's slot.
///
/// Frame 0 is the initial anchor. A merged slot keeps the anchor's timestamp,
/// extends its `merged_span` to cover the absorbed frame, and (under the
/// default chain rule) the compressed embedding becomes the anchor for the
/// next comparison. A frame at or below the threshold is retained unchanged
/// and becomes the new anchor. Exactly-equal-to-theta similarity does not
/// merge.
pub fn compress_sequence(
    seq: &FrameSequence,
    cfg: &SvcConfig,
) -> Result<(FrameSequence, CompressionReport)> {
    if seq.is_empty() {
        return Err(Error::EmptyInput(
            "cannot compress an empty sequence".into(),
        ));
    }
    for f in seq.frames() {
        if f.embedding.is_zero() {
            return Err(Error::DegenerateInput(format!(
                "frame {} has a zero embedding",
                f.frame_index
            )));
        }
    }

    let frames = seq.frames();
    let mut out = vec![frames[0].clone()];
    // Embedding the next frame is compared against (and stacked with on a
    // merge); under AnchorUpdate::Original it stays at the retained frame.
    let mut anchor = frames[0].embedding.clone();
    let mut merges = Vec::new();
    let mut total_energy = 0.0;

    for frame in &frames[1..] {
        let sim = cosine_similarity(&anchor, &frame.embedding)?;
        if sim > cfg.theta {
            let (compressed, energy) = compress_pair_with_energy(&anchor, &frame.embedding, cfg)?;
            let slot = out.last_mut().expect("output starts non-empty");
            let span = slot.extent().union(&frame.extent());
            slot.embedding = compressed.clone();
            slot.merged_span = Some(span);
            merges.push(MergeEvent {
                anchor_index: slot.frame_index,
                absorbed_index: frame.frame_index,
                similarity: sim,
            });
            total_energy += energy;
            if cfg.anchor_update == AnchorUpdate::Compressed {
                anchor = compressed;
            }
        } else {
            out.push(frame.clone());
            anchor = frame.embedding.clone();
        }
    }

    let output_count = out.len();
    let compressed = FrameSequence::new(out, seq.duration())?;
    let report = CompressionReport {
        input_count: frames.len(),
        output_count,
        merges,
        total_reconstruction_error: total_energy,
    };
    debug_assert_eq!(
        report.output_count,
        report.input_count - report.merges.len()
    );
    Ok((compressed, report))
}
