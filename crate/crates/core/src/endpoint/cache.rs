//! Normalized-query cache.
//!
//! Entries are keyed by [`normalize`]d query text and hold the full
//! outcome, failures included, so a failing query never re-executes within a
//! run. Concurrent callers asking for the same key wait on one execution.
//! An optional append-only file makes the cache survive restarts: one JSON
//! record per line, `{hash, query, outcome}`, later records win.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Backend, ExecutionOutcome};
use crate::sparql::normalize;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache file {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub hash: String,
    pub query: String,
    pub outcome: ExecutionOutcome,
}

pub fn query_hash(normalized: &str) -> String {
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

type Slot = Arc<OnceLock<ExecutionOutcome>>;

#[derive(Debug, Default)]
pub struct QueryCache {
    slots: Mutex<HashMap<String, Slot>>,
    hits: AtomicU64,
    misses: AtomicU64,
    log: Option<(PathBuf, Mutex<File>)>,
}

impl QueryCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open (or create) a persistent cache file and preload its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        let mut slots = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(io)?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    // a torn final write from an interrupted run
                    Err(_) if i + 1 == last => {
                        log::warn!("{}: ignoring truncated final record", path.display());
                        continue;
                    }
                    Err(e) => {
                        return Err(CacheError::Corrupt {
                            path: path.clone(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                };
                if record.hash != query_hash(&record.query) {
                    return Err(CacheError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        message: "hash does not match query".into(),
                    });
                }
                let slot = OnceLock::new();
                let _ = slot.set(record.outcome);
                slots.insert(record.query, Arc::new(slot));
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(Self {
            slots: Mutex::new(slots),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            log: Some((path, Mutex::new(file))),
        })
    }

    /// Delete a persisted cache file, if present.
    pub fn clear_file(path: impl AsRef<Path>) -> Result<(), CacheError> {
        let path = path.as_ref();
        match std::fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(source) => Err(CacheError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, query: &str) -> Option<ExecutionOutcome> {
        let key = normalize(query);
        let slots = self.slots.lock().expect("cache lock");
        slots.get(&key).and_then(|s| s.get().cloned())
    }

    /// Look up `query` under its normal form; on a miss run `backend` once.
    pub fn execute(
        &self,
        query: &str,
        backend: &dyn Backend,
        timeout: Option<Duration>,
    ) -> ExecutionOutcome {
        let key = normalize(query);
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock");
            Arc::clone(slots.entry(key.clone()).or_default())
        };
        let mut executed = false;
        let outcome = slot
            .get_or_init(|| {
                executed = true;
                backend.execute(&key, timeout)
            })
            .clone();
        if executed {
            self.misses.fetch_add(1, Ordering::SeqCst);
            self.persist(&key, &outcome);
        } else {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        outcome
    }

    fn persist(&self, key: &str, outcome: &ExecutionOutcome) {
        let Some((path, file)) = &self.log else { return };
        let record = CacheRecord {
            hash: query_hash(key),
            query: key.to_string(),
            outcome: outcome.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("cache record serializes");
        line.push('\n');
        let mut f = file.lock().expect("cache file lock");
        if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
            log::warn!("failed to append to {}: {e}", path.display());
        }
    }
}

pub fn cached_execute(
    query: &str,
    backend: &dyn Backend,
    cache: &QueryCache,
    timeout: Option<Duration>,
) -> ExecutionOutcome {
    cache.execute(query, backend, timeout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::{EmbeddedBackend, ExecStatus};
    use crate::sparql::{Store, Triple};

    fn backend() -> EmbeddedBackend {
        EmbeddedBackend::new(Store::new([Triple::iris("a", "p", "b")]))
    }

    #[test]
    fn second_call_is_a_hit() {
        let b = backend();
        let c = QueryCache::new();
        let q = "ASK { <a> <p> <b> }";
        let first = c.execute(q, &b, None);
        let second = c.execute(q, &b, None);
        assert_eq!(first, second);
        assert_eq!((c.hits(), c.misses()), (1, 1));
        assert_eq!(b.executions(), 1);
    }

    #[test]
    fn whitespace_variant_hits() {
        let b = backend();
        let c = QueryCache::new();
        c.execute("ASK { <a> <p> <b> }", &b, None);
        c.execute("ASK  {\n  <a> <p> <b>\n}", &b, None);
        assert_eq!((c.hits(), c.misses()), (1, 1));
    }

    #[test]
    fn distinct_queries_miss_twice() {
        let b = backend();
        let c = QueryCache::new();
        c.execute("ASK { <a> <p> <b> }", &b, None);
        c.execute("ASK { <a> <p> <c> }", &b, None);
        assert_eq!((c.hits(), c.misses()), (0, 2));
    }

    #[test]
    fn failures_are_cached() {
        let b = backend();
        let c = QueryCache::new();
        let first = c.execute("SELEC nope", &b, None);
        assert_eq!(first.status, ExecStatus::ParseOrSyntaxError);
        c.execute("SELEC  nope", &b, None);
        assert_eq!(b.executions(), 1);
    }

    #[test]
    fn concurrent_callers_coalesce() {
        let b = backend();
        let c = QueryCache::new();
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| c.execute("ASK { <a> <p> <b> }", &b, None));
            }
        });
        assert_eq!(b.executions(), 1);
        assert_eq!(c.hits() + c.misses(), 16);
        assert_eq!(c.misses(), 1);
    }

    #[test]
    fn persisted_cache_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let b = backend();
        {
            let c = QueryCache::open(&path).unwrap();
            c.execute("ASK { <a> <p> <b> }", &b, None);
            c.execute("SELEC", &b, None);
        }
        let c = QueryCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        c.execute("ASK   { <a> <p> <b> }", &b, None);
        assert_eq!(c.hits(), 1);
        assert_eq!(b.executions(), 2);

        let text = std::fs::read_to_string(&path).unwrap();
        let rec: CacheRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.hash, query_hash("ASK { <a> <p> <b> }"));

        QueryCache::clear_file(&path).unwrap();
        assert!(!path.exists());
    }

    #[test]
    fn tampered_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let rec = CacheRecord {
            hash: "00".into(),
            query: "ASK { }".into(),
            outcome: ExecutionOutcome::failure(ExecStatus::Timeout, "t"),
        };
        let line = serde_json::to_string(&rec).unwrap();
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(
            QueryCache::open(&path),
            Err(CacheError::Corrupt { line: 1, .. })
        ));
    }
}
