//! Embedding trace files: line-delimited records under a one-line header.
//!
//! Layout:
//!
//! ```text
//! {"dimension":4,"duration_sec":1.0000000000000000e1,"source_id":"clip-07"}
//! {"frame_index":0,"timestamp_sec":0.0000000000000000e0,"embedding":[...]}
//! {"frame_index":1,"timestamp_sec":1.0000000000000000e0,"embedding":[...],"merged_span":[...]}
//! ```
//!
//! The writer is canonical: fixed key order and every float printed with 17
//! significant digits, so `write(read(f)) == f` byte-for-byte on any file this
//! writer produced, and values always round-trip exactly. The header may carry
//! an optional `plateaus` array (planted segment-start indices) emitted by the
//! synthetic generator; compressed records carry an optional `merged_span`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::embeddings::{EmbeddingVector, FrameRecord, FrameSequence, TimeSpan};
use crate::error::{Error, Result};

/// A frame sequence plus its file-level identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub source_id: String,
    /// Plateau start indices planted by the synthetic generator, when known.
    pub plateaus: Option<Vec<usize>>,
    pub sequence: FrameSequence,
}

/// Canonical float form: 17 significant digits, exponent notation.
/// Guarantees exact f64 round-trips through text.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

#[derive(Deserialize)]
struct HeaderLine {
    dimension: usize,
    duration_sec: f64,
    source_id: String,
    #[serde(default)]
    plateaus: Option<Vec<usize>>,
}

#[derive(Deserialize)]
struct RecordLine {
    frame_index: usize,
    timestamp_sec: f64,
    embedding: Vec<f64>,
    #[serde(default)]
    merged_span: Option<(f64, f64)>,
}

pub fn read_trace<R: Read>(reader: R) -> Result<Trace> {
    let mut lines = BufReader::new(reader).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("trace file is empty, expected a header line".into()))??;
    let header: HeaderLine = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse(format!("trace header: {e}")))?;

    let mut frames = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("trace record on line {}: {e}", lineno + 2)))?;
        if rec.embedding.len() != header.dimension {
            return Err(Error::DimensionMismatch {
                left: header.dimension,
                right: rec.embedding.len(),
            });
        }
        let mut frame = FrameRecord::new(
            rec.frame_index,
            rec.timestamp_sec,
            EmbeddingVector::new(rec.embedding)?,
        )?;
        if let Some((start, end)) = rec.merged_span {
            frame = frame.with_span(TimeSpan::new(start, end)?)?;
        }
        frames.push(frame);
    }

    Ok(Trace {
        source_id: header.source_id,
        plateaus: header.plateaus,
        sequence: FrameSequence::new(frames, header.duration_sec)?,
    })
}

pub fn write_trace<W: Write>(mut writer: W, trace: &Trace) -> Result<()> {
    let dim = trace.sequence.dim().unwrap_or(0);
    let mut header = format!(
        "{{\"dimension\":{},\"duration_sec\":{},\"source_id\":{}",
        dim,
        fmt_f64(trace.sequence.duration()),
        json_str(&trace.source_id),
    );
    if let Some(plateaus) = &trace.plateaus {
        let idx: Vec<String> = plateaus.iter().map(|p| p.to_string()).collect();
        header.push_str(&format!(",\"plateaus\":[{}]", idx.join(",")));
    }
    header.push('}');
    writeln!(writer, "{header}")?;

    for frame in trace.sequence.frames() {
        let emb: Vec<String> = frame
            .embedding
            .as_slice()
            .iter()
            .map(|v| fmt_f64(*v))
            .collect();
        let mut line = format!(
            "{{\"frame_index\":{},\"timestamp_sec\":{},\"embedding\":[{}]",
            frame.frame_index,
            fmt_f64(frame.timestamp),
            emb.join(",")
        );
        if let Some(span) = &frame.merged_span {
            line.push_str(&format!(
                ",\"merged_span\":[{},{}]",
                fmt_f64(span.start_sec),
                fmt_f64(span.end_sec)
            ));
        }
        line.push('}');
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn read_trace_file<P: AsRef<Path>>(path: P) -> Result<Trace> {
    let file = fs::File::open(path)?;
    read_trace(file)
}

pub fn write_trace_file<P: AsRef<Path>>(path: P, trace: &Trace) -> Result<()> {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace)?;
    fs::write(path, buf)?;
    Ok(())
}
