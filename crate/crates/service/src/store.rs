//! Immutable result files addressed by the SHA-256 of their bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Predictions,
    Report,
    Csv,
    Archive,
}

impl ArtifactKind {
    pub fn media_type(self) -> &'static str {
        match self {
            ArtifactKind::Predictions | ArtifactKind::Report => "application/json",
            ArtifactKind::Csv => "text/csv",
            ArtifactKind::Archive => "application/zip",
        }
    }

    fn extension(self) -> &'static str {
        match self {
            ArtifactKind::Predictions | ArtifactKind::Report => "json",
            ArtifactKind::Csv => "csv",
            ArtifactKind::Archive => "zip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactMeta {
    pub id: String,
    pub kind: ArtifactKind,
    pub size: usize,
    #[serde(skip)]
    pub path: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct ArtifactStore {
    dir: PathBuf,
    index: RwLock<BTreeMap<String, ArtifactMeta>>,
}

impl ArtifactStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactStore {
            dir: dir.to_path_buf(),
            index: RwLock::new(BTreeMap::new()),
        })
    }

    /// Store `bytes`; identical content maps to the same id and file.
    pub fn put(&self, kind: ArtifactKind, bytes: &[u8]) -> ApiResult<ArtifactMeta> {
        let id = content_hash(bytes);
        let path = self.dir.join(format!("{id}.{}", kind.extension()));
        if !path.exists() {
            // Write under a temporary name so readers never see a partial file.
            let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
            let tmp = self.dir.join(format!("{id}.{n}.partial"));
            fs::write(&tmp, bytes)
                .and_then(|_| fs::rename(&tmp, &path))
                .map_err(|e| ApiError::internal(format!("writing artifact {id}: {e}")))?;
        }
        let meta = ArtifactMeta {
            id: id.clone(),
            kind,
            size: bytes.len(),
            path,
        };
        self.index.write().expect("artifact index lock").insert(id, meta.clone());
        Ok(meta)
    }

    pub fn meta(&self, id: &str) -> ApiResult<ArtifactMeta> {
        self.index
            .read()
            .expect("artifact index lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("artifact `{id}` does not exist")))
    }

    pub fn read(&self, id: &str) -> ApiResult<(ArtifactMeta, Vec<u8>)> {
        let meta = self.meta(id)?;
        let bytes = fs::read(&meta.path).map_err(|e| ApiError::internal(format!("reading artifact {id}: {e}")))?;
        Ok((meta, bytes))
    }
}
