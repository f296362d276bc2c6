//! Append-only response cache keyed by request digest. One JSON record per
//! line; existing lines are never rewritten, so an interrupted run leaves at
//! worst one truncated tail line, which reload tolerates.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DecodingParams;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache record at {path}:{line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
}

/// The canonical request form whose digest is the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSnapshot {
    pub provider_id: String,
    pub model_id: String,
    pub prompt_text: String,
    pub decoding: DecodingParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub cache_key: String,
    pub request: RequestSnapshot,
    pub raw_response: String,
    pub timestamp_unix: u64,
}

/// Multi-reader single-writer response store backed by a JSONL file.
pub struct Cache {
    path: PathBuf,
    records: RwLock<HashMap<String, CacheRecord>>,
    writer: Mutex<File>,
}

impl Cache {
    /// Open (or create) a cache file and load every intact record. A
    /// truncated final line — the footprint of a killed writer — is ignored;
    /// corruption anywhere else is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| CacheError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        let io_err = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let existing = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(e)),
        };
        let mut records = HashMap::new();
        let lines: Vec<&str> = existing.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheRecord>(line) {
                Ok(record) => {
                    records.insert(record.cache_key.clone(), record);
                }
                Err(reason) => {
                    if i + 1 == lines.len() {
                        // torn tail write from an interrupted run
                        continue;
                    }
                    return Err(CacheError::Corrupt {
                        path: path.display().to_string(),
                        line: i + 1,
                        reason: reason.to_string(),
                    });
                }
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(Self {
            path,
            records: RwLock::new(records),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, cache_key: &str) -> Option<CacheRecord> {
        self.records
            .read()
            .expect("cache lock")
            .get(cache_key)
            .cloned()
    }

    pub fn contains(&self, cache_key: &str) -> bool {
        self.records
            .read()
            .expect("cache lock")
            .contains_key(cache_key)
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records, ordered by cache key for stable listings.
    pub fn records(&self) -> Vec<CacheRecord> {
        let map = self.records.read().expect("cache lock");
        let mut all: Vec<CacheRecord> = map.values().cloned().collect();
        all.sort_by(|a, b| a.cache_key.cmp(&b.cache_key));
        all
    }

    /// Append a record unless its key is already present. The line is fully
    /// serialized before the write lock is taken, and flushed before the
    /// in-memory index is updated.
    pub fn put(&self, record: CacheRecord) -> Result<(), CacheError> {
        if self.contains(&record.cache_key) {
            return Ok(());
        }
        let mut line = serde_json::to_string(&record).expect("cache records serialize");
        line.push('\n');
        {
            let mut writer = self.writer.lock().expect("cache writer lock");
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.flush())
                .map_err(|source| CacheError::Io {
                    path: self.path.display().to_string(),
                    source,
                })?;
        }
        self.records
            .write()
            .expect("cache lock")
            .insert(record.cache_key.clone(), record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(key: &str, response: &str) -> CacheRecord {
        CacheRecord {
            cache_key: key.into(),
            request: RequestSnapshot {
                provider_id: "mock".into(),
                model_id: "m".into(),
                prompt_text: format!("prompt for {key}"),
                decoding: DecodingParams::default(),
            },
            raw_response: response.into(),
            timestamp_unix: 0,
        }
    }

    #[test]
    fn put_get_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = Cache::open(&path).unwrap();
            cache.put(record("k1", "r1")).unwrap();
            cache.put(record("k2", "r2")).unwrap();
            // duplicate key: no second line, first response wins
            cache.put(record("k1", "other")).unwrap();
            assert_eq!(cache.get("k1").unwrap().raw_response, "r1");
        }
        let reopened = Cache::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(reopened.get("k2").unwrap().raw_response, "r2");
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn torn_tail_line_is_tolerated_but_inner_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = Cache::open(&path).unwrap();
            cache.put(record("k1", "r1")).unwrap();
        }
        {
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(b"{\"cache_key\":\"k2\",\"trunc").unwrap();
        }
        let cache = Cache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert!(cache.contains("k1"));

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "not json\n{\"also\":\"junk\"}\n").unwrap();
        assert!(matches!(
            Cache::open(&bad),
            Err(CacheError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn concurrent_writers_never_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = Cache::open(&path).unwrap();
        std::thread::scope(|scope| {
            for t in 0..8 {
                let cache = &cache;
                scope.spawn(move || {
                    for i in 0..50 {
                        cache.put(record(&format!("k{t}-{i}"), "resp")).unwrap();
                    }
                });
            }
        });
        assert_eq!(cache.len(), 400);
        let reopened = Cache::open(&path).unwrap();
        assert_eq!(reopened.len(), 400);
    }
}
