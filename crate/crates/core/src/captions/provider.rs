//! Caption/QA provider contract plus the bundled implementations: a scripted
//! mock for tests, a hash-based pseudo-provider for benchmarks, and an HTTP
//! adapter for a real captioning service.
//!
//! The wire schema (HTTP adapter) is a single endpoint taking a JSON body
//! `{kind, prompt, image_ref?, query?}` and returning `{answer}`, where
//! `answer` is `"yes"`/`"no"` for relevance checks, a caption string for
//! caption requests, and an array of reals for text embedding requests.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    QaRelevance,
    CaptionQueryGuided,
    CaptionGeneric,
    EmbedText,
}

impl RequestKind {
    pub fn label(&self) -> &'static str {
        match self {
            RequestKind::QaRelevance => "qa_relevance",
            RequestKind::CaptionQueryGuided => "caption_query_guided",
            RequestKind::CaptionGeneric => "caption_generic",
            RequestKind::EmbedText => "embed_text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderRequest {
    pub kind: RequestKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<usize>,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderAnswer {
    YesNo(bool),
    Caption(String),
    Embedding(EmbeddingVector),
}

/// Synchronous request/response contract. Implementations must either be
/// safe under concurrent in-flight calls (hence `Sync`) or serialize calls
/// internally; the bundled implementations are all safely concurrent.
pub trait Provider: Send + Sync {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderAnswer>;
}

fn provider_err(segment_id: Option<usize>, message: impl Into<String>) -> Error {
    Error::Provider {
        segment_id,
        message: message.into(),
    }
}

/// Enforce the answer shape the request kind demands; QA answers are
/// strictly binary.
pub fn check_answer(request: &ProviderRequest, answer: ProviderAnswer) -> Result<ProviderAnswer> {
    let ok = matches!(
        (&request.kind, &answer),
        (RequestKind::QaRelevance, ProviderAnswer::YesNo(_))
            | (RequestKind::CaptionQueryGuided, ProviderAnswer::Caption(_))
            | (RequestKind::CaptionGeneric, ProviderAnswer::Caption(_))
            | (RequestKind::EmbedText, ProviderAnswer::Embedding(_))
    );
    if ok {
        Ok(answer)
    } else {
        Err(provider_err(
            request.segment_id,
            format!(
                "answer shape does not match request kind {}",
                request.kind.label()
            ),
        ))
    }
}

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// How the scripted mock answers relevance questions.
#[derive(Debug, Clone)]
pub enum QaRule {
    Always(bool),
    /// Yes iff the segment id is in the set, regardless of the term asked.
    SegmentIn(BTreeSet<usize>),
    /// Yes iff the prompt mentions one of these terms.
    TermIn(BTreeSet<String>),
}

/// Deterministic scripted provider for tests. Captions and embeddings are
/// fixed functions of the request; targeted failures can be injected per
/// segment and per kind.
pub struct ScriptedProvider {
    pub dimension: usize,
    pub qa_rule: QaRule,
    pub fail_qa_segments: BTreeSet<usize>,
    pub fail_caption_segments: BTreeSet<usize>,
    pub fail_embed: bool,
}

impl ScriptedProvider {
    pub fn new(dimension: usize, qa_rule: QaRule) -> Self {
        Self {
            dimension,
            qa_rule,
            fail_qa_segments: BTreeSet::new(),
            fail_caption_segments: BTreeSet::new(),
            fail_embed: false,
        }
    }

    pub fn always(dimension: usize, answer: bool) -> Self {
        Self::new(dimension, QaRule::Always(answer))
    }

    fn text_embedding(&self, text: &str) -> EmbeddingVector {
        // Any deterministic nonzero function of the text works here.
        let sum: f64 = text.bytes().map(|b| b as f64).sum();
        let values = (0..self.dimension)
            .map(|i| 1.0 + ((sum + i as f64) % 7.0) * 0.1)
            .collect();
        EmbeddingVector::new(values).expect("scripted embedding is finite and non-empty")
    }
}

impl Provider for ScriptedProvider {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderAnswer> {
        let seg = request.segment_id;
        match request.kind {
            RequestKind::QaRelevance => {
                if seg.is_some_and(|s| self.fail_qa_segments.contains(&s)) {
                    return Err(provider_err(seg, "scripted QA failure"));
                }
                let yes = match &self.qa_rule {
                    QaRule::Always(b) => *b,
                    QaRule::SegmentIn(set) => seg.is_some_and(|s| set.contains(&s)),
                    QaRule::TermIn(terms) => terms.iter().any(|t| request.prompt.contains(t)),
                };
                Ok(ProviderAnswer::YesNo(yes))
            }
            RequestKind::CaptionQueryGuided | RequestKind::CaptionGeneric => {
                if seg.is_some_and(|s| self.fail_caption_segments.contains(&s)) {
                    return Err(provider_err(seg, "scripted caption failure"));
                }
                let label = match request.kind {
                    RequestKind::CaptionQueryGuided => "query-guided",
                    _ => "generic",
                };
                Ok(ProviderAnswer::Caption(format!(
                    "scripted {label} caption for segment {}",
                    seg.map_or(-1i64, |s| s as i64)
                )))
            }
            RequestKind::EmbedText => {
                if self.fail_embed {
                    return Err(provider_err(seg, "scripted embedding failure"));
                }
                Ok(ProviderAnswer::Embedding(
                    self.text_embedding(&request.prompt),
                ))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Hash-based pseudo-provider
// ---------------------------------------------------------------------------

const HASH_NOUNS: [&str; 16] = [
    "man", "woman", "child", "dog", "car", "table", "guitar", "boat", "bicycle", "kitchen",
    "street", "beach", "crowd", "stage", "garden", "window",
];
const HASH_VERBS: [&str; 8] = [
    "walking", "holding", "riding", "cooking", "dancing", "talking", "playing", "watching",
];

/// Stable synthetic provider: every answer is a pure function of
/// (segment id, prompt) through SHA-256, so runs are reproducible across
/// platforms and releases. Used by benchmarks and the CLI's mock mode.
pub struct HashProvider {
    pub dimension: usize,
    /// Fraction of (segment, term) relevance questions answered yes.
    pub yes_rate: f64,
}

impl HashProvider {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            yes_rate: 0.34,
        }
    }

    fn digest(&self, request: &ProviderRequest, salt: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(request.kind.label().as_bytes());
        hasher.update(
            request
                .segment_id
                .map_or(u64::MAX, |s| s as u64)
                .to_le_bytes(),
        );
        hasher.update(request.prompt.as_bytes());
        hasher.update(salt.to_le_bytes());
        hasher.finalize().into()
    }

    fn unit_interval(bytes: &[u8]) -> f64 {
        let mut v = [0u8; 8];
        v.copy_from_slice(&bytes[..8]);
        u64::from_le_bytes(v) as f64 / u64::MAX as f64
    }
}

impl Provider for HashProvider {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderAnswer> {
        let d = self.digest(request, 0);
        match request.kind {
            RequestKind::QaRelevance => Ok(ProviderAnswer::YesNo(
                Self::unit_interval(&d) < self.yes_rate,
            )),
            RequestKind::CaptionQueryGuided | RequestKind::CaptionGeneric => {
                let noun = HASH_NOUNS[d[8] as usize % HASH_NOUNS.len()];
                let verb = HASH_VERBS[d[9] as usize % HASH_VERBS.len()];
                let noun2 = HASH_NOUNS[d[10] as usize % HASH_NOUNS.len()];
                Ok(ProviderAnswer::Caption(format!(
                    "a {noun} {verb} near a {noun2}"
                )))
            }
            RequestKind::EmbedText => {
                let mut values = Vec::with_capacity(self.dimension);
                let mut salt = 0u64;
                while values.len() < self.dimension {
                    let block = self.digest(request, salt);
                    for chunk in block.chunks_exact(8) {
                        if values.len() == self.dimension {
                            break;
                        }
                        values.push(Self::unit_interval(chunk) * 2.0 - 1.0);
                    }
                    salt += 1;
                }
                if values.iter().all(|v| v.abs() < 1e-12) {
                    values[0] = 1.0; // unreachable in practice; keeps the nonzero contract
                }
                Ok(ProviderAnswer::Embedding(EmbeddingVector::new(values)?))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP adapter
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireRequest<'a> {
    kind: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_ref: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    query: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    answer: serde_json::Value,
}

/// Adapter for an external captioning/QA service speaking the wire schema.
pub struct HttpProvider {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_read(timeout)
            .timeout_write(timeout)
            .timeout_connect(timeout)
            .build();
        Self {
            endpoint: endpoint.into(),
            agent,
            retries,
        }
    }

    fn post_once(&self, body: &str) -> std::result::Result<String, String> {
        match self
            .agent
            .post(&self.endpoint)
            .set("content-type", "application/json")
            .send_string(body)
        {
            Ok(resp) => resp.into_string().map_err(|e| format!("read body: {e}")),
            Err(e) => Err(e.to_string()),
        }
    }

    fn parse_answer(request: &ProviderRequest, body: &str) -> Result<ProviderAnswer> {
        let wire: WireResponse = serde_json::from_str(body)
            .map_err(|e| provider_err(request.segment_id, format!("malformed response: {e}")))?;
        let answer = match (&request.kind, wire.answer) {
            (RequestKind::QaRelevance, serde_json::Value::String(s)) => {
                match s.to_ascii_lowercase().as_str() {
                    "yes" => ProviderAnswer::YesNo(true),
                    "no" => ProviderAnswer::YesNo(false),
                    other => {
                        return Err(provider_err(
                            request.segment_id,
                            format!("relevance answer must be yes or no, got {other:?}"),
                        ))
                    }
                }
            }
            (
                RequestKind::CaptionQueryGuided | RequestKind::CaptionGeneric,
                serde_json::Value::String(s),
            ) => ProviderAnswer::Caption(s),
            (RequestKind::EmbedText, serde_json::Value::Array(items)) => {
                let mut values = Vec::with_capacity(items.len());
                for item in items {
                    let v = item.as_f64().ok_or_else(|| {
                        provider_err(request.segment_id, "embedding entry is not a number")
                    })?;
                    values.push(v);
                }
                ProviderAnswer::Embedding(EmbeddingVector::new(values)?)
            }
            (kind, other) => {
                return Err(provider_err(
                    request.segment_id,
                    format!("unexpected answer {other} for kind {}", kind.label()),
                ))
            }
        };
        check_answer(request, answer)
    }
}

impl Provider for HttpProvider {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderAnswer> {
        let body = serde_json::to_string(&WireRequest {
            kind: request.kind.label(),
            prompt: &request.prompt,
            image_ref: request.image_ref.as_deref(),
            query: request.query.as_deref(),
        })
        .expect("request serialization cannot fail");

        let mut last_err = String::new();
        for _attempt in 0..=self.retries {
            match self.post_once(&body) {
                Ok(text) => return Self::parse_answer(request, &text),
                Err(e) => last_err = e,
            }
        }
        Err(provider_err(
            request.segment_id,
            format!(
                "{} after {} attempt(s): {last_err}",
                self.endpoint,
                self.retries + 1
            ),
        ))
    }
}
