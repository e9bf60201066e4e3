//! LLM transports: live HTTP, recorded-transcript replay, and scripted
//! in-memory responses for tests.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use super::{prompt_digest, MlcotError, TransportRecord};

pub trait LlmTransport: Send + Sync {
    /// Stable backend identifier; part of every cache key.
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, MlcotError>;
}

/// Serves canned responses in call order. Intended for tests.
pub struct ScriptedTransport {
    id: String,
    responses: Mutex<std::vec::IntoIter<String>>,
}

impl ScriptedTransport {
    pub fn new(id: impl Into<String>, responses: Vec<String>) -> Self {
        Self {
            id: id.into(),
            responses: Mutex::new(responses.into_iter()),
        }
    }

    /// A transport that fails every call, for cold-cache error paths.
    pub fn empty(id: impl Into<String>) -> Self {
        Self::new(id, Vec::new())
    }
}

impl LlmTransport for ScriptedTransport {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, _prompt: &str) -> Result<String, MlcotError> {
        self.responses
            .lock()
            .expect("scripted transport poisoned")
            .next()
            .ok_or_else(|| MlcotError::Transport {
                backend: self.id.clone(),
                reason: "no scripted response left".to_string(),
            })
    }
}

/// Replays a transcript fixture file (one JSON record per line) by prompt
/// digest. Unknown prompts are transport errors.
pub struct RecordedTransport {
    id: String,
    by_digest: HashMap<String, String>,
}

impl RecordedTransport {
    pub fn from_records(records: impl IntoIterator<Item = TransportRecord>) -> Self {
        let mut id = String::new();
        let mut by_digest = HashMap::new();
        for record in records {
            if id.is_empty() {
                id = record.backend_id.clone();
            }
            by_digest.insert(record.prompt_digest.clone(), record.response_text);
        }
        if id.is_empty() {
            id = "recorded".to_string();
        }
        Self { id, by_digest }
    }

    pub fn load(path: &Path) -> Result<Self, MlcotError> {
        let text = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str::<TransportRecord>(line)?);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }
}

impl LlmTransport for RecordedTransport {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String, MlcotError> {
        let digest = prompt_digest(&self.id, prompt);
        self.by_digest
            .get(&digest)
            .cloned()
            .ok_or_else(|| MlcotError::Transport {
                backend: self.id.clone(),
                reason: format!("no recorded response for prompt digest {digest}"),
            })
    }
}

/// Live chat-completions backend. Credentials come from the environment so
/// they never land in config files or transcripts.
pub struct HttpTransport {
    id: String,
    url: String,
    model: String,
    api_key: String,
}

impl HttpTransport {
    pub fn from_env(url: &str, model: &str, api_key_env: &str) -> Result<Self, MlcotError> {
        let api_key = std::env::var(api_key_env).map_err(|_| MlcotError::Transport {
            backend: format!("http:{model}"),
            reason: format!("environment variable {api_key_env} not set"),
        })?;
        Ok(Self {
            id: format!("http:{model}"),
            url: url.to_string(),
            model: model.to_string(),
            api_key,
        })
    }
}

impl LlmTransport for HttpTransport {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String, MlcotError> {
        let transport_err = |reason: String| MlcotError::Transport {
            backend: self.id.clone(),
            reason,
        };
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        });
        let response = ureq::post(&self.url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| transport_err(e.to_string()))?;
        let json: serde_json::Value = response
            .into_json()
            .map_err(|e| transport_err(format!("malformed response body: {e}")))?;
        json["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| transport_err("response has no choices[0].message.content".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_serves_in_order_then_fails() {
        let transport = ScriptedTransport::new("test", vec!["a".to_string(), "b".to_string()]);
        assert_eq!(transport.complete("x").unwrap(), "a");
        assert_eq!(transport.complete("y").unwrap(), "b");
        assert!(transport.complete("z").is_err());
    }

    #[test]
    fn recorded_replays_by_digest() {
        let record = TransportRecord::new("fixture", "what objects?", "knife, pen");
        let transport = RecordedTransport::from_records([record]);
        assert_eq!(transport.complete("what objects?").unwrap(), "knife, pen");
        assert!(transport.complete("something else").is_err());
    }
}
