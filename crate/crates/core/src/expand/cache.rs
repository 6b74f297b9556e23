//! Append-only JSONL cache of query expansions, keyed by a stable content
//! hash of (action text, model id, prompt version).

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One cached expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub start_desc: String,
    pub end_desc: String,
    pub created_at: u64,
}

/// Stable content hash over the inputs that determine an expansion.
pub fn cache_key(action_text: &str, model_id: &str, prompt_version: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(action_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt_version.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// In-memory map over an append-only JSONL file. Later lines shadow earlier
/// ones for the same key; compaction keeps only the newest entry per key.
#[derive(Debug, Default)]
pub struct ExpansionCache {
    path: Option<PathBuf>,
    entries: HashMap<String, CacheEntry>,
}

impl ExpansionCache {
    /// Opens (or lazily creates) a file-backed cache. Malformed lines are
    /// skipped with a warning so a truncated append never poisons the run.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        match std::fs::File::open(path) {
            Ok(file) => {
                for (lineno, line) in BufReader::new(file).lines().enumerate() {
                    let line = line?;
                    let trimmed = line.trim();
                    if trimmed.is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<CacheEntry>(trimmed) {
                        Ok(entry) => {
                            entries.insert(entry.key.clone(), entry);
                        }
                        Err(err) => {
                            log::warn!("skipping cache line {}: {err}", lineno + 1);
                        }
                    }
                }
            }
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
            Err(err) => return Err(err),
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    /// Purely in-memory cache, used by tests and offline fixtures.
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&CacheEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts and appends to the backing file.
    pub fn put(&mut self, entry: CacheEntry) -> std::io::Result<()> {
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(
                file,
                "{}",
                serde_json::to_string(&entry).expect("cache entry serializes")
            )?;
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Rewrites the backing file with one line per key, sorted by key.
    pub fn compact(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            out.push_str(&serde_json::to_string(&self.entries[key]).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}
