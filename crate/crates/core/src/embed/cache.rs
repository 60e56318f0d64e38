use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::qfeb::{load_embedding_file, write_embedding_file};
use super::EmbedError;
use crate::cqr::EmbeddingMatrix;
use crate::util::sha256_hex;

/// Cache key for the frame embeddings of one candidate set.
pub fn cache_key(video_digest: &str, candidate_indices: &[usize], model_hint: Option<&str>) -> String {
    let indices = candidate_indices
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let indices_digest = sha256_hex(indices.as_bytes());
    sha256_hex(format!("{video_digest}\n{indices_digest}\n{}", model_hint.unwrap_or("")).as_bytes())
}

/// Directory of QFEB files keyed by [`cache_key`]. Reads are lock-free;
/// writes to one key are serialized and land via atomic rename.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
    writers: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            writers: Arc::default(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.qfeb"))
    }

    /// A cached matrix, or `None` when absent or unreadable.
    pub fn get(&self, key: &str) -> Option<EmbeddingMatrix> {
        let path = self.path_for(key);
        if !path.exists() {
            return None;
        }
        match load_embedding_file(&path) {
            Ok(m) => Some(m),
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable cache entry");
                None
            }
        }
    }

    pub fn put(&self, key: &str, matrix: &EmbeddingMatrix) -> Result<PathBuf, EmbedError> {
        fs::create_dir_all(&self.dir).map_err(|source| EmbedError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let lock = self
            .writers
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_default()
            .clone();
        let _guard = lock.lock().unwrap();
        let path = self.path_for(key);
        write_embedding_file(matrix, &path)?;
        Ok(path)
    }
}
