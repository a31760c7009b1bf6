//! Append-only response cache.
//!
//! Backend results are stored as JSON lines `{key, kind, backend_id, value}`
//! where `key` is a stable hash of the backend id and the request. The file
//! is loaded once at open; new entries are appended through a single writer.
//! A key is written at most once: later puts for an existing key are ignored.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::stable_hash;

pub const CACHE_FILE: &str = "responses.jsonl";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}:{line}: corrupt cache entry: {reason}")]
    CacheCorrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cache io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    Generate,
    Grade,
    Detect,
    Sgg,
}

impl CacheKind {
    fn as_str(self) -> &'static str {
        match self {
            CacheKind::Generate => "generate",
            CacheKind::Grade => "grade",
            CacheKind::Detect => "detect",
            CacheKind::Sgg => "sgg",
        }
    }
}

/// Key for a backend call. `parts` are the request fields that determine the
/// response, e.g. image reference and prompt text.
pub fn cache_key(kind: CacheKind, backend_id: &str, parts: &[&str]) -> String {
    stable_hash([kind.as_str(), backend_id].into_iter().chain(parts.iter().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub kind: CacheKind,
    pub backend_id: String,
    pub value: serde_json::Value,
}

#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, serde_json::Value>>,
    writer: Mutex<BufWriter<File>>,
}

impl ResponseCache {
    /// Opens (creating if needed) `responses.jsonl` in `dir`.
    pub fn open_dir(dir: &Path) -> Result<Self, CacheError> {
        fs::create_dir_all(dir).map_err(|source| CacheError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Self::open(&dir.join(CACHE_FILE))
    }

    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let content = fs::read_to_string(path).map_err(io)?;
            for (idx, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(line).map_err(|e| CacheError::CacheCorrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
                entries.entry(entry.key).or_insert(entry.value);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(ResponseCache {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<serde_json::Value> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn get_as<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Option<T> {
        self.get(key).and_then(|v| serde_json::from_value(v).ok())
    }

    /// Stores `value` unless `key` is already present. Returns whether the
    /// entry was written.
    pub fn put(
        &self,
        kind: CacheKind,
        backend_id: &str,
        key: &str,
        value: serde_json::Value,
    ) -> Result<bool, CacheError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        {
            let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
            if entries.contains_key(key) {
                tracing::info!(key, "cache already holds this key; keeping the first entry");
                return Ok(false);
            }
            entries.insert(key.to_string(), value.clone());
        }
        let entry = CacheEntry {
            key: key.to_string(),
            kind,
            backend_id: backend_id.to_string(),
            value,
        };
        let io = |source| CacheError::Io {
            path: self.path.clone(),
            source,
        };
        serde_json::to_writer(&mut *writer, &entry).map_err(|e| io(e.into()))?;
        writer.write_all(b"\n").map_err(io)?;
        writer.flush().map_err(io)?;
        Ok(true)
    }

    pub fn put_as<T: Serialize>(&self, kind: CacheKind, backend_id: &str, key: &str, value: &T) -> Result<bool, CacheError> {
        let value = serde_json::to_value(value).expect("cache values serialize");
        self.put(kind, backend_id, key, value)
    }
}
