//! Query-guided caption generation: query parsing, QA-based scene-relevance
//! filtering, dual-path prompt selection, and the storage-efficient /
//! latency-efficient operating modes, all over a pluggable provider.
//!
//! Storage-efficient (SE) mode generates every caption on demand: relevant
//! segments get a query-guided caption, the rest get a generic one.
//! Latency-efficient (LE) mode starts from a pre-computed generic caption
//! store and only issues re-captioning requests for segments that pass the
//! relevance check.

mod lexicon;
mod provider;
mod store;

pub use lexicon::{parse_query, QueryIntent, QueryParser};
pub use provider::{
    check_answer, HashProvider, HttpProvider, Provider, ProviderAnswer, ProviderRequest, QaRule,
    RequestKind, ScriptedProvider,
};
pub use store::{CaptionStore, StoredCaption};

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingVector, FrameRecord, FrameSequence, TimeSpan};
use crate::error::{Error, Result};
use crate::trace::fmt_f64;

pub const GENERIC_PROMPT: &str = "Describe the scene.";
/// Deterministic placeholder used when every captioning attempt for a
/// segment failed.
pub const FALLBACK_TEXT: &str = "(caption unavailable)";

pub fn qa_prompt(term: &str) -> String {
    format!("Does \"{term}\" appear in the scene?")
}

pub fn query_guided_prompt(query: &str) -> String {
    format!("Generate a caption that is relevant to the query: \"{query}\"")
}

/// Index of the frame whose timestamp is nearest to `t`; ties go to the
/// earlier frame.
pub fn nearest_frame_index(frames: &[FrameRecord], t: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in frames.iter().enumerate() {
        let d = (f.timestamp - t).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// One temporal segment with the frame that stands in for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSegment {
    pub segment_id: usize,
    pub span: TimeSpan,
    pub representative_frame: FrameRecord,
}

impl SceneSegment {
    pub fn new(
        segment_id: usize,
        span: TimeSpan,
        representative_frame: FrameRecord,
    ) -> Result<Self> {
        if span.start_sec >= span.end_sec {
            return Err(Error::Ordering(format!(
                "segment {segment_id} span [{}, {}) is empty",
                span.start_sec, span.end_sec
            )));
        }
        Ok(Self {
            segment_id,
            span,
            representative_frame,
        })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.span.start_sec + self.span.end_sec)
    }

    fn image_ref(&self) -> String {
        format!("frame:{}", self.representative_frame.frame_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionPath {
    QueryGuided,
    Generic,
}

/// One caption per segment, tagged with the branch that produced it.
///
/// Invariant: `path == QueryGuided` exactly when the relevance check passed
/// and the record was not degraded by a provider failure. `fallback` marks
/// records whose intended branch failed and that carry a generic (or
/// placeholder) caption instead.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub segment: SceneSegment,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub path: CaptionPath,
    pub relevance_passed: bool,
    pub fallback: bool,
}

impl CaptionRecord {
    pub fn validate(&self) -> Result<()> {
        let want_guided = self.relevance_passed && !self.fallback;
        if (self.path == CaptionPath::QueryGuided) != want_guided {
            return Err(Error::Config(format!(
                "segment {}: path {:?} inconsistent with relevance_passed {} / fallback {}",
                self.segment.segment_id, self.path, self.relevance_passed, self.fallback
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptionMode {
    /// Storage-efficient: all captions generated on demand.
    #[serde(rename = "se", alias = "SE")]
    StorageEfficient,
    /// Latency-efficient: pre-computed generic captions, selective
    /// re-captioning of relevant segments.
    #[serde(rename = "le", alias = "LE")]
    LatencyEfficient,
}

/// Boolean combination of the per-term relevance answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceAggregation {
    /// Relevant when any object/action is present. Missing a relevant scene
    /// costs retrieval more than an extra query-guided caption, so this is
    /// the default.
    #[default]
    Any,
    All,
}

pub struct CaptionOptions<'a> {
    pub mode: CaptionMode,
    pub aggregation: RelevanceAggregation,
    pub source_id: String,
    pub store: Option<&'a CaptionStore>,
}

// ---------------------------------------------------------------------------
// Call log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub kind: RequestKind,
    pub segment_id: Option<usize>,
    pub latency: Duration,
    pub ok: bool,
}

/// Transcript of every provider call a pipeline run issued, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CallLog {
    pub calls: Vec<CallRecord>,
}

impl CallLog {
    pub fn count(&self, kind: RequestKind) -> usize {
        self.calls.iter().filter(|c| c.kind == kind).count()
    }

    pub fn total_latency(&self, kind: RequestKind) -> Duration {
        self.calls
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.latency)
            .sum()
    }
}

/// Per-stage latency rows: QA filtering, then query-guided captioning (SE)
/// or selective re-captioning (LE), generic captioning, text embedding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLatency {
    pub stage: String,
    pub calls: usize,
    pub total_secs: f64,
}

pub fn latency_breakdown(log: &CallLog, mode: CaptionMode) -> Vec<StageLatency> {
    let row = |stage: &str, kind: RequestKind| StageLatency {
        stage: stage.to_string(),
        calls: log.count(kind),
        total_secs: log.total_latency(kind).as_secs_f64(),
    };
    let guided_label = match mode {
        CaptionMode::StorageEfficient => "query_guided_captioning",
        CaptionMode::LatencyEfficient => "selective_recaptioning",
    };
    vec![
        row("qa_filtering", RequestKind::QaRelevance),
        row(guided_label, RequestKind::CaptionQueryGuided),
        row("generic_captioning", RequestKind::CaptionGeneric),
        row("text_embedding", RequestKind::EmbedText),
    ]
}

struct LoggedProvider<'a> {
    inner: &'a dyn Provider,
    log: &'a mut CallLog,
}

impl LoggedProvider<'_> {
    fn call(&mut self, request: &ProviderRequest) -> Result<ProviderAnswer> {
        let t0 = Instant::now();
        let result = self
            .inner
            .call(request)
            .and_then(|a| check_answer(request, a));
        self.log.calls.push(CallRecord {
            kind: request.kind,
            segment_id: request.segment_id,
            latency: t0.elapsed(),
            ok: result.is_ok(),
        });
        result.map_err(|e| match e {
            Error::Provider { message, .. } => Error::Provider {
                segment_id: request.segment_id,
                message,
            },
            other => Error::Provider {
                segment_id: request.segment_id,
                message: other.to_string(),
            },
        })
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Divide `[0, duration)` into ceil(duration / interval) half-open segments,
/// the last truncated at `duration`. Each segment's representative frame is
/// the one nearest its midpoint (tie: earlier frame).
pub fn segment_video(
    duration: f64,
    interval: f64,
    frames: &FrameSequence,
) -> Result<Vec<SceneSegment>> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Config(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::Config(format!(
            "interval must be positive, got {interval}"
        )));
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to segment".into()));
    }
    let count = (duration / interval).ceil() as usize;
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        let start = i as f64 * interval;
        let end = ((i + 1) as f64 * interval).min(duration);
        let span = TimeSpan::new(start, end)?;
        let mid = 0.5 * (start + end);
        let rep = nearest_frame_index(frames.frames(), mid).expect("frames checked non-empty");
        segments.push(SceneSegment::new(i, span, frames.frames()[rep].clone())?);
    }
    Ok(segments)
}

/// Provider-delegated variant of `parse_query`: the provider is asked for a
/// comma-separated object list and action list. Deterministic whenever the
/// provider is.
pub fn parse_query_with_provider(
    raw: &str,
    provider: &dyn Provider,
    log: &mut CallLog,
) -> Result<QueryIntent> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut logged = LoggedProvider {
        inner: provider,
        log,
    };
    let mut ask = |what: &str| -> Result<Vec<String>> {
        let request = ProviderRequest {
            kind: RequestKind::CaptionGeneric,
            segment_id: None,
            prompt: format!(
                "List the {what} mentioned in this query as a comma-separated list: \"{trimmed}\""
            ),
            image_ref: None,
            query: Some(trimmed.to_string()),
        };
        match logged.call(&request)? {
            ProviderAnswer::Caption(text) => Ok(lexicon::split_term_list(&text)),
            _ => unreachable!("check_answer enforces the shape"),
        }
    };
    let objects = ask("objects")?;
    let actions: Vec<String> = ask("actions")?
        .into_iter()
        .filter(|t| !objects.contains(t))
        .collect();
    Ok(QueryIntent {
        raw_query: trimmed.to_string(),
        objects,
        actions,
    })
}

/// QA-based relevance: one question per object/action, answers combined per
/// `aggregation`. Every term is always asked, so the provider transcript has
/// a closed-form length.
pub fn classify_relevance(
    segment: &SceneSegment,
    intent: &QueryIntent,
    provider: &dyn Provider,
    aggregation: RelevanceAggregation,
    log: &mut CallLog,
) -> Result<bool> {
    if intent.term_count() == 0 {
        return Err(Error::EmptyInput(
            "query intent has no objects or actions".into(),
        ));
    }
    let mut logged = LoggedProvider {
        inner: provider,
        log,
    };
    let mut answers = Vec::with_capacity(intent.term_count());
    for term in intent.terms() {
        let request = ProviderRequest {
            kind: RequestKind::QaRelevance,
            segment_id: Some(segment.segment_id),
            prompt: qa_prompt(term),
            image_ref: Some(segment.image_ref()),
            query: None,
        };
        match logged.call(&request)? {
            ProviderAnswer::YesNo(b) => answers.push(b),
            _ => unreachable!("check_answer enforces the shape"),
        }
    }
    Ok(match aggregation {
        RelevanceAggregation::Any => answers.iter().any(|b| *b),
        RelevanceAggregation::All => answers.iter().all(|b| *b),
    })
}

pub struct CaptionRun {
    pub records: Vec<CaptionRecord>,
    pub log: CallLog,
}

/// Run the dual-path captioning pipeline over all segments.
///
/// Per-segment provider failures on the QA or caption calls degrade that
/// segment to a generic fallback record and the pipeline continues; a failed
/// text-embedding call aborts, since a caption without an embedding cannot
/// flow further. LE mode requires a store covering every segment with
/// matching spans; anything else reports the store as missing/stale.
pub fn generate_captions(
    segments: &[SceneSegment],
    intent: &QueryIntent,
    provider: &dyn Provider,
    opts: &CaptionOptions<'_>,
) -> Result<CaptionRun> {
    let mut log = CallLog::default();
    let store = match opts.mode {
        CaptionMode::LatencyEfficient => Some(opts.store.ok_or_else(|| {
            Error::StoreMissing("latency-efficient mode needs a caption store".into())
        })?),
        CaptionMode::StorageEfficient => None,
    };

    let mut records = Vec::with_capacity(segments.len());
    for segment in segments {
        let stored_text: Option<String> = match store {
            Some(s) => Some(
                s.lookup(&opts.source_id, segment.segment_id, &segment.span)
                    .ok_or_else(|| {
                        Error::StoreMissing(format!(
                            "no stored caption for source {:?} segment {} [{}, {}); \
                             store stale or built with a different interval",
                            opts.source_id,
                            segment.segment_id,
                            segment.span.start_sec,
                            segment.span.end_sec
                        ))
                    })?
                    .to_string(),
            ),
            None => None,
        };

        let relevance = classify_relevance(segment, intent, provider, opts.aggregation, &mut log);
        let mut logged = LoggedProvider {
            inner: provider,
            log: &mut log,
        };
        let caption_request =
            |kind: RequestKind, prompt: String, query: Option<String>| ProviderRequest {
                kind,
                segment_id: Some(segment.segment_id),
                prompt,
                image_ref: Some(segment.image_ref()),
                query,
            };

        let (text, path, relevance_passed, fallback) = match relevance {
            Ok(true) => {
                let req = caption_request(
                    RequestKind::CaptionQueryGuided,
                    query_guided_prompt(&intent.raw_query),
                    Some(intent.raw_query.clone()),
                );
                match logged.call(&req) {
                    Ok(ProviderAnswer::Caption(t)) => (t, CaptionPath::QueryGuided, true, false),
                    Ok(_) => unreachable!("check_answer enforces the shape"),
                    // Query-guided captioning failed: degrade to the stored
                    // generic caption (LE) or the placeholder (SE).
                    Err(_) => match &stored_text {
                        Some(t) => (t.clone(), CaptionPath::Generic, true, true),
                        None => (FALLBACK_TEXT.to_string(), CaptionPath::Generic, true, true),
                    },
                }
            }
            Ok(false) => match &stored_text {
                Some(t) => (t.clone(), CaptionPath::Generic, false, false),
                None => {
                    let req = caption_request(
                        RequestKind::CaptionGeneric,
                        GENERIC_PROMPT.to_string(),
                        None,
                    );
                    match logged.call(&req) {
                        Ok(ProviderAnswer::Caption(t)) => (t, CaptionPath::Generic, false, false),
                        Ok(_) => unreachable!("check_answer enforces the shape"),
                        Err(_) => (FALLBACK_TEXT.to_string(), CaptionPath::Generic, false, true),
                    }
                }
            },
            // Relevance check itself failed: treat as not relevant, mark the
            // record degraded, keep going.
            Err(_) => match &stored_text {
                Some(t) => (t.clone(), CaptionPath::Generic, false, true),
                None => {
                    let req = caption_request(
                        RequestKind::CaptionGeneric,
                        GENERIC_PROMPT.to_string(),
                        None,
                    );
                    match logged.call(&req) {
                        Ok(ProviderAnswer::Caption(t)) => (t, CaptionPath::Generic, false, true),
                        Ok(_) => unreachable!("check_answer enforces the shape"),
                        Err(_) => (FALLBACK_TEXT.to_string(), CaptionPath::Generic, false, true),
                    }
                }
            },
        };

        let embed_req = ProviderRequest {
            kind: RequestKind::EmbedText,
            segment_id: Some(segment.segment_id),
            prompt: text.clone(),
            image_ref: None,
            query: None,
        };
        let embedding = match logged.call(&embed_req)? {
            ProviderAnswer::Embedding(e) => e,
            _ => unreachable!("check_answer enforces the shape"),
        };

        let record = CaptionRecord {
            segment: segment.clone(),
            text,
            embedding,
            path,
            relevance_passed,
            fallback,
        };
        record.validate()?;
        records.push(record);
    }

    Ok(CaptionRun { records, log })
}

/// Generate a generic caption for every segment and bundle them as a store,
/// i.e. the pre-computation step that LE mode later consumes.
pub fn precompute_store(
    segments: &[SceneSegment],
    provider: &dyn Provider,
    source_id: &str,
    log: &mut CallLog,
) -> Result<CaptionStore> {
    let mut logged = LoggedProvider {
        inner: provider,
        log,
    };
    let mut records = Vec::with_capacity(segments.len());
    for segment in segments {
        let req = ProviderRequest {
            kind: RequestKind::CaptionGeneric,
            segment_id: Some(segment.segment_id),
            prompt: GENERIC_PROMPT.to_string(),
            image_ref: Some(segment.image_ref()),
            query: None,
        };
        let text = match logged.call(&req)? {
            ProviderAnswer::Caption(t) => t,
            _ => unreachable!("check_answer enforces the shape"),
        };
        records.push(StoredCaption {
            source_id: source_id.to_string(),
            segment_id: segment.segment_id,
            start: segment.span.start_sec,
            end: segment.span.end_sec,
            text,
        });
    }
    Ok(CaptionStore::new(records))
}

// ---------------------------------------------------------------------------
// Caption records file
// ---------------------------------------------------------------------------

/// File form of a caption record; the representative frame is re-derived
/// from a frame sequence on load.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CaptionFileRecord {
    pub segment_id: usize,
    pub start: f64,
    pub end: f64,
    pub text: String,
    pub path: CaptionPath,
    pub relevance_passed: bool,
    pub fallback: bool,
    pub embedding: Vec<f64>,
}

pub fn write_caption_records<W: Write>(mut writer: W, records: &[CaptionRecord]) -> Result<()> {
    for r in records {
        let emb: Vec<String> = r.embedding.as_slice().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(
            writer,
            "{{\"segment_id\":{},\"start\":{},\"end\":{},\"text\":{},\"path\":{},\"relevance_passed\":{},\"fallback\":{},\"embedding\":[{}]}}",
            r.segment.segment_id,
            fmt_f64(r.segment.span.start_sec),
            fmt_f64(r.segment.span.end_sec),
            serde_json::to_string(&r.text).expect("string"),
            serde_json::to_string(&r.path).expect("enum"),
            r.relevance_passed,
            r.fallback,
            emb.join(","),
        )?;
    }
    Ok(())
}

pub fn read_caption_records<R: Read>(reader: R) -> Result<Vec<CaptionFileRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionFileRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("caption record line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_caption_records_file<P: AsRef<Path>>(
    path: P,
    records: &[CaptionRecord],
) -> Result<()> {
    let mut buf = Vec::new();
    write_caption_records(&mut buf, records)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_caption_records_file<P: AsRef<Path>>(path: P) -> Result<Vec<CaptionFileRecord>> {
    let file = fs::File::open(path)?;
    read_caption_records(file)
}

/// Rebuild full caption records against a frame sequence, re-deriving each
/// segment's representative frame by the nearest-to-midpoint rule.
pub fn attach_segments(
    file_records: &[CaptionFileRecord],
    frames: &FrameSequence,
) -> Result<Vec<CaptionRecord>> {
    if frames.is_empty() {
        return Err(Error::Pairing(
            "cannot attach captions: frame sequence is empty".into(),
        ));
    }
    let mut out = Vec::with_capacity(file_records.len());
    for r in file_records {
        let span = TimeSpan::new(r.start, r.end)?;
        let mid = 0.5 * (r.start + r.end);
        let rep = nearest_frame_index(frames.frames(), mid).expect("frames checked non-empty");
        let record = CaptionRecord {
            segment: SceneSegment::new(r.segment_id, span, frames.frames()[rep].clone())?,
            text: r.text.clone(),
            embedding: EmbeddingVector::new(r.embedding.clone())?,
            path: r.path,
            relevance_passed: r.relevance_passed,
            fallback: r.fallback,
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}
