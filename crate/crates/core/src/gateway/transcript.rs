//! Directory-backed transcript store: one JSON file per transcript key.
//!
//! Entries are small, pretty-printed, and deterministic, so fixture
//! transcripts can live in the test tree and be inspected (or written) by
//! hand. Writes are serialized; reads go straight to disk.

use super::{GatewayError, PromptKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// One persisted prompt→response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub strategy: PromptKind,
    pub response: String,
}

pub struct TranscriptStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl TranscriptStore {
    /// Open (creating if needed) a store rooted at `dir`.
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| GatewayError::Store(format!("create {}: {e}", dir.display())))?;
        Ok(TranscriptStore {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<TranscriptEntry>, GatewayError> {
        let path = self.path_for(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Store(format!("read {}: {e}", path.display()))),
        };
        let entry: TranscriptEntry = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Store(format!("parse {}: {e}", path.display())))?;
        Ok(Some(entry))
    }

    /// Persist an entry. Writing the same entry twice leaves a single,
    /// byte-identical record. Writes go through a temp file and a rename,
    /// so concurrent readers never observe a torn entry.
    pub fn put(&self, entry: &TranscriptEntry) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().unwrap();
        let path = self.path_for(&entry.key);
        let mut text =
            serde_json::to_string_pretty(entry).map_err(|e| GatewayError::Store(e.to_string()))?;
        text.push('\n');
        let tmp = self.dir.join(format!("{}.tmp", entry.key));
        std::fs::write(&tmp, text)
            .map_err(|e| GatewayError::Store(format!("write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, &path)
            .map_err(|e| GatewayError::Store(format!("rename into {}: {e}", path.display())))
    }

    /// All stored keys, sorted.
    pub fn keys(&self) -> Result<Vec<String>, GatewayError> {
        let mut keys = Vec::new();
        let entries = std::fs::read_dir(&self.dir)
            .map_err(|e| GatewayError::Store(format!("list {}: {e}", self.dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| GatewayError::Store(e.to_string()))?;
            let name = entry.file_name();
            if let Some(key) = name.to_string_lossy().strip_suffix(".json") {
                keys.push(key.to_string());
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        let entry = TranscriptEntry {
            key: "abc123".into(),
            strategy: PromptKind::Reverse,
            response: "fixed the code\nscore: 7".into(),
        };
        store.put(&entry).unwrap();
        assert_eq!(store.get("abc123").unwrap(), Some(entry.clone()));
        assert_eq!(store.get("missing").unwrap(), None);

        // Rewrites are byte-identical.
        let path = dir.path().join("abc123.json");
        let before = std::fs::read(&path).unwrap();
        store.put(&entry).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), before);
        assert_eq!(store.keys().unwrap(), vec!["abc123".to_string()]);
    }

    #[test]
    fn corrupt_entry_is_a_store_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        std::fs::write(dir.path().join("bad.json"), "not json").unwrap();
        assert!(matches!(store.get("bad"), Err(GatewayError::Store(_))));
    }
}
