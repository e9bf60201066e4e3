//! Append-only transcript cache: one JSON record per line, keyed by the
//! stable digest of (backend id, prompt text).
//!
//! A file-backed cache doubles as a transcript fixture: replaying against it
//! reproduces a live run byte for byte. Writes are serialized behind a mutex
//! so concurrent per-task pipelines can share one store.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use super::{MlcotError, TransportRecord};

pub struct TranscriptCache {
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    records: HashMap<String, TransportRecord>,
    file: Option<File>,
}

impl TranscriptCache {
    /// Purely in-memory cache, for tests and throwaway runs.
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(CacheInner {
                records: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Open (or create) a file-backed cache, loading any existing records.
    pub fn open(path: &Path) -> Result<Self, MlcotError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut records = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let record: TransportRecord = serde_json::from_str(line)?;
                records.insert(record.prompt_digest.clone(), record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(CacheInner {
                records,
                file: Some(file),
            }),
        })
    }

    pub fn lookup(&self, digest: &str) -> Option<TransportRecord> {
        self.inner
            .lock()
            .expect("cache poisoned")
            .records
            .get(digest)
            .cloned()
    }

    /// Insert a record, persisting it if file-backed. First write wins: a
    /// record already present under the same digest is kept unchanged.
    pub fn insert(&self, record: TransportRecord) -> Result<(), MlcotError> {
        let mut inner = self.inner.lock().expect("cache poisoned");
        if inner.records.contains_key(&record.prompt_digest) {
            return Ok(());
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.records.insert(record.prompt_digest.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records, ordered by digest for reproducible exports.
    pub fn records(&self) -> Vec<TransportRecord> {
        let inner = self.inner.lock().expect("cache poisoned");
        let mut records: Vec<TransportRecord> = inner.records.values().cloned().collect();
        records.sort_by(|a, b| a.prompt_digest.cmp(&b.prompt_digest));
        records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_backed_cache_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = TranscriptCache::open(&path).unwrap();
            cache
                .insert(TransportRecord::new("b", "p1", "r1"))
                .unwrap();
            cache
                .insert(TransportRecord::new("b", "p2", "r2"))
                .unwrap();
        }
        let cache = TranscriptCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        let digest = super::super::prompt_digest("b", "p1");
        assert_eq!(cache.lookup(&digest).unwrap().response_text, "r1");
    }

    #[test]
    fn first_write_wins() {
        let cache = TranscriptCache::in_memory();
        cache.insert(TransportRecord::new("b", "p", "first")).unwrap();
        cache.insert(TransportRecord::new("b", "p", "second")).unwrap();
        let digest = super::super::prompt_digest("b", "p");
        assert_eq!(cache.lookup(&digest).unwrap().response_text, "first");
        assert_eq!(cache.len(), 1);
    }
}
