//! Content-addressed response cache: one JSON file per request, named by the
//! SHA-256 of the request kind, model and payload.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
}

pub fn cache_key(kind: &str, model: &str, payload: &str) -> String {
    let mut h = Sha256::new();
    for part in [kind, model, payload] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Cache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub async fn get<V: DeserializeOwned>(&self, key: &str) -> Option<V> {
        let bytes = tokio::fs::read(self.path(key)).await.ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Writes via a temporary file and rename so readers never see partial
    /// entries.
    pub async fn put<V: Serialize>(&self, key: &str, value: &V) -> Result<()> {
        let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        tokio::fs::write(&tmp, serde_json::to_vec(value)?).await?;
        tokio::fs::rename(&tmp, self.path(key)).await?;
        Ok(())
    }
}
