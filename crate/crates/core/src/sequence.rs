//! Interleaved model-input assembly: `[time, frame]` pairs in ascending time
//! order with each caption slot inserted right after the frame nearest its
//! segment midpoint, then the fixed tail of duration metadata, query, and
//! instruction. Time payloads are whole seconds, rounded half away from zero.
//!
//! A sequence serializes to a line-oriented manifest plus a sidecar binary
//! block of little-endian 32-bit floats; vector payloads are referenced by
//! element offset into the sidecar, so a consumer in any ecosystem can mmap
//! the block and walk the manifest.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captions::nearest_frame_index;
use crate::embeddings::{EmbeddingVector, FrameSequence};
use crate::error::{Error, Result};
use crate::modulation::ScoredCaption;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Time,
    Frame,
    Caption,
    DurationMeta,
    Query,
    Instruction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotPayload {
    /// Whole seconds; time tokens are integers by construction.
    Seconds(u64),
    Vector(EmbeddingVector),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceRef {
    Frame(usize),
    Segment(usize),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSlot {
    pub kind: SlotKind,
    pub payload: SlotPayload,
    pub source_ref: SourceRef,
}

impl TokenSlot {
    fn payload_matches_kind(&self) -> bool {
        matches!(
            (&self.kind, &self.payload),
            (SlotKind::Time, SlotPayload::Seconds(_))
                | (SlotKind::DurationMeta, SlotPayload::Seconds(_))
                | (SlotKind::Frame, SlotPayload::Vector(_))
                | (SlotKind::Caption, SlotPayload::Vector(_))
                | (SlotKind::Query, SlotPayload::Text(_))
                | (SlotKind::Instruction, SlotPayload::Text(_))
        )
    }
}

/// Vector-slot budget and what an assembly actually used. Text is tracked in
/// characters; only vector slots count against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryBudget {
    pub max_vector_slots: usize,
    pub used_vector_slots: usize,
    pub used_text_chars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    slots: Vec<TokenSlot>,
    budget: MemoryBudget,
}

impl InterleavedSequence {
    pub fn slots(&self) -> &[TokenSlot] {
        &self.slots
    }

    pub fn budget(&self) -> &MemoryBudget {
        &self.budget
    }

    fn validate(&self) -> Result<()> {
        for slot in &self.slots {
            if !slot.payload_matches_kind() {
                return Err(Error::Config(format!(
                    "slot payload does not match kind {:?}",
                    slot.kind
                )));
            }
        }
        let mut last_time: Option<u64> = None;
        for slot in &self.slots {
            if slot.kind == SlotKind::Time {
                if let SlotPayload::Seconds(s) = &slot.payload {
                    if last_time.is_some_and(|t| *s < t) {
                        return Err(Error::Ordering("time slots must be non-decreasing".into()));
                    }
                    last_time = Some(*s);
                }
            }
        }
        let n = self.slots.len();
        let tail_ok = n >= 3
            && self.slots[n - 3].kind == SlotKind::DurationMeta
            && self.slots[n - 2].kind == SlotKind::Query
            && self.slots[n - 1].kind == SlotKind::Instruction
            && self.slots[..n - 3].iter().all(|s| {
                !matches!(
                    s.kind,
                    SlotKind::DurationMeta | SlotKind::Query | SlotKind::Instruction
                )
            });
        if !tail_ok {
            return Err(Error::Ordering(
                "sequence must end with exactly one duration, query, instruction".into(),
            ));
        }
        Ok(())
    }
}

/// Round half away from zero; timestamps are non-negative so this is plain
/// `f64::round`.
fn round_seconds(t: f64) -> u64 {
    t.round() as u64
}

/// Build the interleaved sequence.
///
/// Caption slots use the reweighted embedding and are placed immediately
/// after the frame nearest their segment midpoint (tie: earlier frame),
/// keeping multiple captions on one frame in input order. With no frames at
/// all, captions lead the sequence in input order.
pub fn assemble(
    frames: &FrameSequence,
    captions: &[ScoredCaption],
    query: &str,
    instruction: &str,
    max_vector_slots: usize,
) -> Result<InterleavedSequence> {
    let recs = frames.frames();
    for w in recs.windows(2) {
        if w[0].timestamp >= w[1].timestamp {
            return Err(Error::Ordering(format!(
                "frame timestamps not strictly increasing at frame {}",
                w[1].frame_index
            )));
        }
    }

    let used_vector_slots = recs.len() + captions.len();
    if used_vector_slots > max_vector_slots {
        return Err(Error::BudgetExceeded {
            overflow: used_vector_slots - max_vector_slots,
            max: max_vector_slots,
        });
    }

    // Caption index -> frame position it follows (None with an empty frame list).
    let mut per_frame: Vec<Vec<&ScoredCaption>> = vec![Vec::new(); recs.len()];
    let mut head_captions: Vec<&ScoredCaption> = Vec::new();
    for c in captions {
        match nearest_frame_index(recs, c.caption.segment.midpoint()) {
            Some(i) => per_frame[i].push(c),
            None => head_captions.push(c),
        }
    }

    let caption_slot = |c: &ScoredCaption| TokenSlot {
        kind: SlotKind::Caption,
        payload: SlotPayload::Vector(c.reweighted_embedding.clone()),
        source_ref: SourceRef::Segment(c.caption.segment.segment_id),
    };

    let mut slots = Vec::with_capacity(2 * recs.len() + captions.len() + 3);
    slots.extend(head_captions.iter().map(|c| caption_slot(c)));
    for (i, frame) in recs.iter().enumerate() {
        slots.push(TokenSlot {
            kind: SlotKind::Time,
            payload: SlotPayload::Seconds(round_seconds(frame.timestamp)),
            source_ref: SourceRef::Frame(frame.frame_index),
        });
        slots.push(TokenSlot {
            kind: SlotKind::Frame,
            payload: SlotPayload::Vector(frame.embedding.clone()),
            source_ref: SourceRef::Frame(frame.frame_index),
        });
        slots.extend(per_frame[i].iter().map(|c| caption_slot(c)));
    }
    slots.push(TokenSlot {
        kind: SlotKind::DurationMeta,
        payload: SlotPayload::Seconds(round_seconds(frames.duration())),
        source_ref: SourceRef::None,
    });
    slots.push(TokenSlot {
        kind: SlotKind::Query,
        payload: SlotPayload::Text(query.to_string()),
        source_ref: SourceRef::None,
    });
    slots.push(TokenSlot {
        kind: SlotKind::Instruction,
        payload: SlotPayload::Text(instruction.to_string()),
        source_ref: SourceRef::None,
    });

    let seq = InterleavedSequence {
        slots,
        budget: MemoryBudget {
            max_vector_slots,
            used_vector_slots,
            used_text_chars: query.chars().count() + instruction.chars().count(),
        },
    };
    seq.validate()?;
    Ok(seq)
}

/// Exact usage counts, recomputed from the slots themselves.
pub fn footprint(seq: &InterleavedSequence) -> MemoryBudget {
    let used_vector_slots = seq
        .slots
        .iter()
        .filter(|s| matches!(s.kind, SlotKind::Frame | SlotKind::Caption))
        .count();
    let used_text_chars = seq
        .slots
        .iter()
        .filter_map(|s| match &s.payload {
            SlotPayload::Text(t) => Some(t.chars().count()),
            _ => None,
        })
        .sum();
    MemoryBudget {
        max_vector_slots: seq.budget.max_vector_slots,
        used_vector_slots,
        used_text_chars,
    }
}

// ---------------------------------------------------------------------------
// Manifest + sidecar serialization
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ManifestHeader {
    slots: usize,
    dimension: usize,
    max_vector_slots: usize,
    sidecar: String,
}

#[derive(Serialize, Deserialize)]
struct VecRef {
    offset: usize,
    len: usize,
}

#[derive(Deserialize)]
struct ManifestLine {
    kind: SlotKind,
    #[serde(default)]
    seconds: Option<u64>,
    #[serde(default)]
    vec: Option<VecRef>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    frame: Option<usize>,
    #[serde(default)]
    segment: Option<usize>,
}

/// Write the manifest text and the sidecar float block. `sidecar_name` is
/// recorded in the manifest header so a reader can find the block.
pub fn write_sequence<W1: Write, W2: Write>(
    mut manifest: W1,
    mut sidecar: W2,
    seq: &InterleavedSequence,
    sidecar_name: &str,
) -> Result<()> {
    let dimension = seq
        .slots
        .iter()
        .find_map(|s| match &s.payload {
            SlotPayload::Vector(v) => Some(v.dim()),
            _ => None,
        })
        .unwrap_or(0);
    writeln!(
        manifest,
        "{{\"slots\":{},\"dimension\":{},\"max_vector_slots\":{},\"sidecar\":{}}}",
        seq.slots.len(),
        dimension,
        seq.budget.max_vector_slots,
        serde_json::to_string(sidecar_name).expect("string"),
    )?;

    let mut offset = 0usize;
    for slot in &seq.slots {
        let source = match slot.source_ref {
            SourceRef::Frame(i) => format!(",\"frame\":{i}"),
            SourceRef::Segment(i) => format!(",\"segment\":{i}"),
            SourceRef::None => String::new(),
        };
        match &slot.payload {
            SlotPayload::Seconds(s) => {
                writeln!(
                    manifest,
                    "{{\"kind\":{},\"seconds\":{s}{source}}}",
                    serde_json::to_string(&slot.kind).expect("enum"),
                )?;
            }
            SlotPayload::Vector(v) => {
                for value in v.as_slice() {
                    sidecar.write_all(&(*value as f32).to_le_bytes())?;
                }
                writeln!(
                    manifest,
                    "{{\"kind\":{},\"vec\":{{\"offset\":{offset},\"len\":{}}}{source}}}",
                    serde_json::to_string(&slot.kind).expect("enum"),
                    v.dim(),
                )?;
                offset += v.dim();
            }
            SlotPayload::Text(t) => {
                writeln!(
                    manifest,
                    "{{\"kind\":{},\"text\":{}{source}}}",
                    serde_json::to_string(&slot.kind).expect("enum"),
                    serde_json::to_string(t).expect("string"),
                )?;
            }
        }
    }
    Ok(())
}

/// Read a manifest plus its sidecar block back into a sequence. Vector
/// payloads come back at f32 precision.
pub fn read_sequence<R: Read>(manifest: R, sidecar: &[u8]) -> Result<InterleavedSequence> {
    let mut lines = BufReader::new(manifest).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("manifest is empty".into()))??;
    let header: ManifestHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse(format!("manifest header: {e}")))?;
    if !sidecar.len().is_multiple_of(4) {
        return Err(Error::Parse("sidecar length is not a multiple of 4".into()));
    }
    let floats: Vec<f64> = sidecar
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let mut slots = Vec::with_capacity(header.slots);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("manifest line {}: {e}", lineno + 2)))?;
        let source_ref = match (m.frame, m.segment) {
            (Some(i), None) => SourceRef::Frame(i),
            (None, Some(i)) => SourceRef::Segment(i),
            (None, None) => SourceRef::None,
            _ => return Err(Error::Parse("slot has two source refs".into())),
        };
        let payload = match (m.seconds, m.vec, m.text) {
            (Some(s), None, None) => SlotPayload::Seconds(s),
            (None, Some(v), None) => {
                let end = v.offset.checked_add(v.len).filter(|e| *e <= floats.len());
                let end = end.ok_or_else(|| {
                    Error::Parse(format!(
                        "vector reference [{}, {}) outside sidecar of {} floats",
                        v.offset,
                        v.offset + v.len,
                        floats.len()
                    ))
                })?;
                if v.len != header.dimension {
                    return Err(Error::DimensionMismatch {
                        left: header.dimension,
                        right: v.len,
                    });
                }
                SlotPayload::Vector(EmbeddingVector::new(floats[v.offset..end].to_vec())?)
            }
            (None, None, Some(t)) => SlotPayload::Text(t),
            _ => return Err(Error::Parse("slot must have exactly one payload".into())),
        };
        slots.push(TokenSlot {
            kind: m.kind,
            payload,
            source_ref,
        });
    }
    if slots.len() != header.slots {
        return Err(Error::Parse(format!(
            "manifest declared {} slots, found {}",
            header.slots,
            slots.len()
        )));
    }

    let mut seq = InterleavedSequence {
        slots,
        budget: MemoryBudget {
            max_vector_slots: header.max_vector_slots,
            used_vector_slots: 0,
            used_text_chars: 0,
        },
    };
    seq.budget = footprint(&seq);
    seq.validate()?;
    Ok(seq)
}

/// Read a sequence from a manifest file, locating the sidecar through the
/// name recorded in the manifest header (resolved next to the manifest).
pub fn read_sequence_files<P: AsRef<Path>>(manifest_path: P) -> Result<InterleavedSequence> {
    let text = fs::read_to_string(&manifest_path)?;
    let header_line = text
        .lines()
        .next()
        .ok_or_else(|| Error::Parse("manifest is empty".into()))?;
    let header: ManifestHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::Parse(format!("manifest header: {e}")))?;
    let sidecar_path = manifest_path
        .as_ref()
        .parent()
        .map(|d| d.join(&header.sidecar))
        .unwrap_or_else(|| header.sidecar.clone().into());
    let sidecar = fs::read(sidecar_path)?;
    read_sequence(text.as_bytes(), &sidecar)
}

pub fn write_sequence_files<P: AsRef<Path>>(
    manifest_path: P,
    sidecar_path: P,
    seq: &InterleavedSequence,
) -> Result<()> {
    let sidecar_name = sidecar_path
        .as_ref()
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sidecar.bin".to_string());
    let mut manifest = Vec::new();
    let mut sidecar = Vec::new();
    write_sequence(&mut manifest, &mut sidecar, seq, &sidecar_name)?;
    fs::write(manifest_path, manifest)?;
    fs::write(sidecar_path, sidecar)?;
    Ok(())
}
