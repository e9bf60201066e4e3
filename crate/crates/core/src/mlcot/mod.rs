//! Multi-level chain-of-thought prompting against a pluggable LLM transport.
//!
//! Three prompt levels run in sequence for a task: object-level brainstorming
//! of candidate objects, rationale generation for why each object affords the
//! task, and summarization of the rationales into visual-affordance phrases.
//! Every transport exchange is persisted to a replayable cache so runs are
//! reproducible offline.

mod cache;
mod parse;
mod pipeline;
mod prompt;
mod transport;

pub use cache::TranscriptCache;
pub use parse::{parse_objects, parse_rationales, parse_response, parse_summaries, Parsed};
pub use pipeline::{run_mlcot, MlcotOptions};
pub use prompt::{
    build_prompt, format_object_list, format_rationales, format_summaries, PromptContext,
    PromptTemplates,
};
pub use transport::{HttpTransport, LlmTransport, RecordedTransport, ScriptedTransport};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A task in text form, e.g. "open parcel".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u32,
    pub phrase: String,
}

impl TaskSpec {
    pub fn new(id: u32, phrase: impl Into<String>) -> Self {
        let phrase = phrase.into();
        assert!(!phrase.trim().is_empty(), "task phrase must be non-empty");
        Self { id, phrase }
    }
}

/// The three prompting levels, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptLevel {
    ObjectLevel,
    RationaleLevel,
    SummaryLevel,
}

impl PromptLevel {
    pub fn name(self) -> &'static str {
        match self {
            PromptLevel::ObjectLevel => "object",
            PromptLevel::RationaleLevel => "rationale",
            PromptLevel::SummaryLevel => "summary",
        }
    }
}

/// One brainstormed object example and (after rationale-level prompting) the
/// rationales for why it affords the task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectExample {
    pub name: String,
    pub rationales: Vec<String>,
}

/// A parsed set of visual-affordance phrases, before embedding. Provenance
/// (the object example and its rationales) is kept so detections can later be
/// explained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeUnitDraft {
    pub attribute_phrases: Vec<String>,
    pub source_object: String,
    pub source_rationales: Vec<String>,
}

/// One persisted transport exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportRecord {
    pub backend_id: String,
    pub prompt_digest: String,
    pub prompt_text: String,
    pub response_text: String,
    pub timestamp: String,
}

impl TransportRecord {
    pub fn new(backend_id: &str, prompt: &str, response: &str) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            prompt_digest: prompt_digest(backend_id, prompt),
            prompt_text: prompt.to_string(),
            response_text: response.to_string(),
            timestamp: now_rfc3339(),
        }
    }
}

/// Stable cache key for one exchange.
pub fn prompt_digest(backend_id: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backend_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn now_rfc3339() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // Civil-date conversion (Howard Hinnant's algorithm), UTC only.
    let days = secs / 86_400;
    let rem = secs % 86_400;
    let era_day = days + 719_468;
    let era = era_day / 146_097;
    let doe = era_day % 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if month <= 2 { year + 1 } else { year };
    format!(
        "{year:04}-{month:02}-{day:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

#[derive(Debug, thiserror::Error)]
pub enum MlcotError {
    #[error("{level}-level prompt requires context from the previous level: {what}")]
    MissingContext { level: &'static str, what: String },
    #[error("empty response from transport")]
    EmptyResponse,
    #[error("unparseable {level}-level response: {reason}; raw text: {raw:?}")]
    Parse {
        level: &'static str,
        reason: String,
        raw: String,
    },
    #[error("{level}-level response still unparseable after {attempts} attempts: {last}")]
    RetriesExhausted {
        level: &'static str,
        attempts: usize,
        last: String,
    },
    #[error("transport {backend}: {reason}")]
    Transport { backend: String, reason: String },
    #[error("cache i/o: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("cache record malformed: {0}")]
    CacheFormat(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_backend_scoped() {
        let a = prompt_digest("backend-a", "hello");
        assert_eq!(a, prompt_digest("backend-a", "hello"));
        assert_ne!(a, prompt_digest("backend-b", "hello"));
        assert_ne!(a, prompt_digest("backend-a", "hello!"));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn timestamp_looks_like_rfc3339() {
        let ts = now_rfc3339();
        assert_eq!(ts.len(), 20);
        assert!(ts.ends_with('Z'));
        assert_eq!(&ts[4..5], "-");
    }
}
