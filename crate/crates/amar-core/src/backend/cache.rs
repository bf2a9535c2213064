//! Append-only response cache keyed by the canonical request digest.
//!
//! Cache file is JSON Lines of `{"key", "response"}`. Hits return the stored
//! response verbatim without touching the wrapped backend. Corrupted lines
//! are reported with their line number and skipped; the cache stays usable.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{AmarError, Result};
use crate::index::EmbeddingVector;

use super::{Backend, ModelRequest, Purpose};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: String,
}

struct CacheState {
    entries: HashMap<String, String>,
    file: File,
}

pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    path: PathBuf,
    state: Mutex<CacheState>,
}

impl CachedBackend {
    /// Open (or create) the cache file at `path` around `inner`.
    pub fn open(path: &Path, inner: Arc<dyn Backend>) -> Result<CachedBackend> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| AmarError::io(parent, e))?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| AmarError::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| AmarError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.response);
                    }
                    Err(e) => {
                        log::warn!(
                            "cache {}: line {}: corrupt entry bypassed: {e}",
                            path.display(),
                            i + 1
                        );
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AmarError::io(path, e))?;
        Ok(CachedBackend {
            inner,
            path: path.to_path_buf(),
            state: Mutex::new(CacheState { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lookup(&self, key: &str) -> Option<String> {
        let state = self.state.lock().expect("cache lock");
        state.entries.get(key).cloned()
    }

    fn store(&self, key: String, response: String) -> Result<()> {
        let mut state = self.state.lock().expect("cache lock");
        let line = serde_json::to_string(&CacheLine {
            key: key.clone(),
            response: response.clone(),
        })
        .expect("cache line serializes");
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.write_all(b"\n"))
            .and_then(|_| state.file.flush())
            .map_err(|e| AmarError::io(&self.path, e))?;
        state.entries.insert(key, response);
        Ok(())
    }
}

impl Backend for CachedBackend {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<String> {
        request.validate()?;
        let key = request.digest();
        if let Some(hit) = self.lookup(&key) {
            return Ok(hit);
        }
        let response = self.inner.complete(request)?;
        self.store(key, response.clone())?;
        Ok(response)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let request = ModelRequest::text(Purpose::Embed, text);
        request.validate()?;
        let key = request.digest();
        if let Some(hit) = self.lookup(&key) {
            let values: Vec<f64> = serde_json::from_str(&hit).map_err(|e| {
                AmarError::BackendRequest(format!("cached embedding is corrupt: {e}"))
            })?;
            return EmbeddingVector::new(values);
        }
        let vector = self.inner.embed(text)?;
        let stored = serde_json::to_string(vector.values())
            .map_err(|e| AmarError::BackendRequest(e.to_string()))?;
        self.store(key, stored)?;
        Ok(vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Wrapper counting how often the inner backend is actually consulted.
    struct CountingBackend {
        inner: Arc<dyn Backend>,
        calls: AtomicUsize,
    }

    impl CountingBackend {
        fn new(inner: Arc<dyn Backend>) -> Arc<Self> {
            Arc::new(CountingBackend {
                inner,
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl Backend for CountingBackend {
        fn model_id(&self) -> &str {
            self.inner.model_id()
        }

        fn complete(&self, request: &ModelRequest) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(request)
        }

        fn embed(&self, text: &str) -> Result<EmbeddingVector> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed(text)
        }
    }

    use crate::backend::MockBackend;

    #[test]
    fn identical_requests_hit_the_backend_once() {
        let dir = tempfile::tempdir().unwrap();
        let counting = CountingBackend::new(Arc::new(MockBackend::new("m", 1)));
        let cached =
            CachedBackend::open(&dir.path().join("cache.jsonl"), counting.clone()).unwrap();
        let req = ModelRequest::text(Purpose::Generate, "tell me about the painting");
        let first = cached.complete(&req).unwrap();
        let second = cached.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = ModelRequest::text(Purpose::Generate, "question");
        let first = {
            let cached =
                CachedBackend::open(&path, Arc::new(MockBackend::new("m", 1))).unwrap();
            cached.complete(&req).unwrap()
        };
        let counting = CountingBackend::new(Arc::new(MockBackend::new("m", 1)));
        let cached = CachedBackend::open(&path, counting.clone()).unwrap();
        assert_eq!(cached.complete(&req).unwrap(), first);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn corrupt_line_is_bypassed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        let counting = CountingBackend::new(Arc::new(MockBackend::new("m", 1)));
        let cached = CachedBackend::open(&path, counting.clone()).unwrap();
        let req = ModelRequest::text(Purpose::Generate, "q");
        cached.complete(&req).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn whitespace_differences_produce_distinct_keys() {
        let dir = tempfile::tempdir().unwrap();
        let counting = CountingBackend::new(Arc::new(MockBackend::new("m", 1)));
        let cached =
            CachedBackend::open(&dir.path().join("cache.jsonl"), counting.clone()).unwrap();
        cached
            .complete(&ModelRequest::text(Purpose::Generate, "a b"))
            .unwrap();
        cached
            .complete(&ModelRequest::text(Purpose::Generate, "a  b"))
            .unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn cached_embed_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mock = Arc::new(MockBackend::new("m", 5));
        let direct = mock.embed("some node text").unwrap();
        let cached = CachedBackend::open(&path, mock).unwrap();
        let first = cached.embed("some node text").unwrap();
        let second = cached.embed("some node text").unwrap();
        assert_eq!(direct, first);
        assert_eq!(first, second);
    }
}
