//! Pre-computed generic caption store for latency-efficient captioning.
//!
//! Line-delimited records `{source_id, segment_id, start, end, text}`. A
//! lookup must match the segment's span as well as its id; a span mismatch
//! means the store was built with a different interval or duration and is
//! reported as stale.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::embeddings::TimeSpan;
use crate::error::{Error, Result};
use crate::trace::fmt_f64;

const SPAN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct StoredCaption {
    pub source_id: String,
    pub segment_id: usize,
    pub start: f64,
    pub end: f64,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptionStore {
    records: Vec<StoredCaption>,
}

impl CaptionStore {
    pub fn new(records: Vec<StoredCaption>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[StoredCaption] {
        &self.records
    }

    /// Stored text for a segment, requiring both id and span to line up.
    pub fn lookup(&self, source_id: &str, segment_id: usize, span: &TimeSpan) -> Option<&str> {
        self.records
            .iter()
            .find(|r| {
                r.source_id == source_id
                    && r.segment_id == segment_id
                    && (r.start - span.start_sec).abs() <= SPAN_EPS
                    && (r.end - span.end_sec).abs() <= SPAN_EPS
            })
            .map(|r| r.text.as_str())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoredCaption = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("caption store line {}: {e}", lineno + 1)))?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        for r in &self.records {
            writeln!(
                writer,
                "{{\"source_id\":{},\"segment_id\":{},\"start\":{},\"end\":{},\"text\":{}}}",
                serde_json::to_string(&r.source_id).expect("string"),
                r.segment_id,
                fmt_f64(r.start),
                fmt_f64(r.end),
                serde_json::to_string(&r.text).expect("string"),
            )?;
        }
        Ok(())
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = fs::File::open(&path)
            .map_err(|e| Error::StoreMissing(format!("{}: {e}", path.as_ref().display())))?;
        Self::read(file)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> CaptionStore {
        CaptionStore::new(vec![
            StoredCaption {
                source_id: "vid".into(),
                segment_id: 0,
                start: 0.0,
                end: 2.0,
                text: "a dog in a garden".into(),
            },
            StoredCaption {
                source_id: "vid".into(),
                segment_id: 1,
                start: 2.0,
                end: 4.0,
                text: "a dog running".into(),
            },
        ])
    }

    #[test]
    fn lookup_requires_matching_span() {
        let s = store();
        let good = TimeSpan::new(0.0, 2.0).unwrap();
        let stale = TimeSpan::new(0.0, 1.0).unwrap();
        assert_eq!(s.lookup("vid", 0, &good), Some("a dog in a garden"));
        assert_eq!(s.lookup("vid", 0, &stale), None);
        assert_eq!(s.lookup("other", 0, &good), None);
    }

    #[test]
    fn round_trips_through_text() {
        let s = store();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let back = CaptionStore::read(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_file_is_store_missing() {
        let err = CaptionStore::read_file("/nonexistent/store.jsonl");
        assert!(matches!(err, Err(Error::StoreMissing(_))));
    }
}
