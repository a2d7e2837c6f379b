//! On-disk response cache keyed by `(model_name, sha256(prompt))`.
//!
//! Entries are written to a temporary file and renamed into place, so readers
//! never observe a torn entry. Concurrent writers of the same key race
//! harmlessly: every writer stores the same deterministic response.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    response: String,
}

impl ResponseCache {
    pub fn new(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn key(model: &str, prompt: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(model.as_bytes());
        hasher.update([0u8]);
        hasher.update(prompt.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, model: &str, prompt: &str) -> Option<String> {
        let raw = fs::read(self.path_for(&Self::key(model, prompt))).ok()?;
        let entry: Entry = serde_json::from_slice(&raw).ok()?;
        (entry.model == model).then_some(entry.response)
    }

    pub fn put(&self, model: &str, prompt: &str, response: &str) -> io::Result<()> {
        let path = self.path_for(&Self::key(model, prompt));
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(
            &mut tmp,
            &Entry {
                model: model.to_string(),
                response: response.to_string(),
            },
        )?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
