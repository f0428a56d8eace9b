//! Shared registry of datasets, jobs and artifacts.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use tokio::sync::Semaphore;

use crate::datasets::{extract_archive, Dataset};
use crate::error::{ApiError, ApiResult};
use crate::jobs::Job;
use crate::store::ArtifactStore;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    /// Jobs allowed to execute at once.
    pub workers: usize,
    pub pixel_size_nm: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_root: PathBuf::from("data"),
            workers: 2,
            pixel_size_nm: lsinspect::raster::DEFAULT_PIXEL_SIZE_NM,
        }
    }
}

#[derive(Debug)]
pub struct Registry {
    pub config: ServiceConfig,
    pub artifacts: ArtifactStore,
    pub(crate) datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    pub(crate) jobs: RwLock<BTreeMap<String, Arc<Job>>>,
    pub(crate) slots: Arc<Semaphore>,
    next_id: AtomicU64,
}

/// Cheap handle shared by every request handler.
#[derive(Debug, Clone)]
pub struct AppState(pub Arc<Registry>);

pub(crate) fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl AppState {
    pub fn new(config: ServiceConfig) -> std::io::Result<Self> {
        if config.workers == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "at least one worker slot is required",
            ));
        }
        let artifacts = ArtifactStore::open(&config.data_root.join("artifacts"))?;
        std::fs::create_dir_all(config.data_root.join("datasets"))?;
        let slots = Arc::new(Semaphore::new(config.workers));
        Ok(AppState(Arc::new(Registry {
            config,
            artifacts,
            datasets: RwLock::new(BTreeMap::new()),
            jobs: RwLock::new(BTreeMap::new()),
            slots,
            next_id: AtomicU64::new(1),
        })))
    }

    pub(crate) fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{:06}", self.0.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn dataset(&self, id: &str) -> ApiResult<Arc<Dataset>> {
        self.0
            .datasets
            .read()
            .expect("dataset lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("dataset `{id}` does not exist")))
    }

    pub fn datasets(&self) -> Vec<Arc<Dataset>> {
        self.0.datasets.read().expect("dataset lock").values().cloned().collect()
    }

    pub(crate) fn register_dataset(&self, ds: Dataset) -> Arc<Dataset> {
        let ds = Arc::new(ds);
        self.0
            .datasets
            .write()
            .expect("dataset lock")
            .insert(ds.handle.id.clone(), ds.clone());
        ds
    }

    pub(crate) fn dataset_root(&self, id: &str) -> PathBuf {
        self.0.config.data_root.join("datasets").join(id)
    }

    /// Extract an uploaded archive and register it. Blocking.
    pub fn upload(&self, archive: &[u8]) -> ApiResult<Arc<Dataset>> {
        let id = self.fresh_id("ds");
        let ds = extract_archive(&id, archive, &self.dataset_root(&id), self.0.config.pixel_size_nm, unix_now())?;
        Ok(self.register_dataset(ds))
    }

    pub fn job(&self, id: &str) -> ApiResult<Arc<Job>> {
        self.0
            .jobs
            .read()
            .expect("job lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("job `{id}` does not exist")))
    }

    pub fn jobs(&self) -> Vec<Arc<Job>> {
        self.0.jobs.read().expect("job lock").values().cloned().collect()
    }
}
