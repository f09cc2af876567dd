//! File-backed persistence with atomic replace-on-write
//! (write temp file, fsync, rename over the target).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::evalrun::RunRecord;
use crate::pairwise::PairwiseStudy;
use crate::workflow::WorkflowState;
use std::collections::BTreeMap;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("store document {path} is corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
}

/// Everything the harness persists: corpus, workflow state, evaluation
/// runs (with raw judge output and diagnostics) and pairwise studies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub corpus: Corpus,
    #[serde(default)]
    pub workflow: WorkflowState,
    #[serde(default)]
    pub runs: BTreeMap<String, RunRecord>,
    #[serde(default)]
    pub studies: BTreeMap<String, PairwiseStudy>,
}

/// A JSON document on disk.
#[derive(Debug, Clone)]
pub struct FileStore {
    path: PathBuf,
}

impl FileStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Loads the document, or `T::default()` when the file does not exist.
    pub fn load<T: DeserializeOwned + Default>(&self) -> Result<T, StoreError> {
        match fs::read(&self.path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| StoreError::Corrupt { path: self.path.clone(), message: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
            Err(source) => Err(StoreError::Io { path: self.path.clone(), source }),
        }
    }

    pub fn save<T: Serialize>(&self, value: &T) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(value).expect("store state serializes");
        write_atomic(&self.path, &bytes)
    }
}

/// Replaces `path` with `bytes` so readers see either the old or the new
/// content, never a partial write.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
