//! Shared service state: the served dataset, the inference worker and the
//! open sessions.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use c3det_core::dataset::{list_split, load_image, read_meta, DatasetMeta, Split};
use c3det_core::{Detection, LabeledImage, UserInput};
use c3det_model::{Checkpoint, Detector};
use tokio::sync::{Mutex, OwnedMutexGuard, OwnedSemaphorePermit, RwLock, Semaphore};

use crate::error::{ApiError, ApiResult};
use crate::store::{existing_sessions, now_ms, SessionFiles, SessionRecord};

/// Requests admitted to the inference queue (running plus waiting). Further
/// requests are rejected with 429.
pub const QUEUE_DEPTH: usize = 8;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Root of the served dataset (the layout written by `gen-data`).
    pub data: PathBuf,
    /// Checkpoint used by `/infer`; without one the endpoint answers 503.
    pub checkpoint: Option<PathBuf>,
    /// Where session directories are kept.
    pub sessions_dir: PathBuf,
    pub port: u16,
}

/// The served dataset: metadata plus an index from image id to split.
#[derive(Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub name: String,
    pub meta: DatasetMeta,
    splits: BTreeMap<String, Split>,
}

impl DatasetIndex {
    pub fn open(root: &Path) -> Result<Self, ServerError> {
        let meta = read_meta(root)?;
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            // A dataset may ship only some splits.
            if !root.join("labels").join(split.as_str()).is_dir() {
                continue;
            }
            for id in list_split(root, split)? {
                if let Some(previous) = splits.insert(id.clone(), split) {
                    return Err(ServerError::Dataset(format!("image id {id:?} appears in both {previous} and {split}")));
                }
            }
        }
        let name = root
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "default".to_string());
        Ok(Self {
            root: root.to_path_buf(),
            name,
            meta,
            splits,
        })
    }

    /// Whether a session request's `dataset` refers to this dataset.
    pub fn matches(&self, name: &str) -> bool {
        name == self.name || name == "default"
    }

    pub fn split_of(&self, image_id: &str) -> ApiResult<Split> {
        self.splits
            .get(image_id)
            .copied()
            .ok_or_else(|| ApiError::NotFound(format!("unknown image {image_id:?}")))
    }

    pub fn image_ids(&self, split: Split) -> Vec<&str> {
        self.splits.iter().filter(|(_, s)| **s == split).map(|(id, _)| id.as_str()).collect()
    }

    pub fn load(&self, image_id: &str) -> ApiResult<LabeledImage> {
        let split = self.split_of(image_id)?;
        load_image(&self.root, split, image_id, &self.meta).map_err(ApiError::internal)
    }
}

/// A loaded model behind a single worker: requests are admitted up to
/// [`QUEUE_DEPTH`] and then run one at a time.
pub struct InferenceWorker {
    detector: Arc<Mutex<Detector>>,
    admission: Arc<Semaphore>,
    pub version: String,
}

impl InferenceWorker {
    pub fn new(detector: Detector, version: String) -> Self {
        Self {
            detector: Arc::new(Mutex::new(detector)),
            admission: Arc::new(Semaphore::new(QUEUE_DEPTH)),
            version,
        }
    }

    pub fn load(path: &Path, meta: &DatasetMeta) -> Result<Self, ServerError> {
        let ckpt = Checkpoint::load(path, Some(&meta.classes))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let version = format!(
            "{}/{stem}@epoch{}-step{}",
            ckpt.config.variant.as_str(),
            ckpt.info.epoch,
            ckpt.info.step
        );
        Ok(Self::new(Detector::from_checkpoint(&ckpt)?, version))
    }

    /// Requests currently admitted (running or waiting).
    pub fn pending(&self) -> usize {
        QUEUE_DEPTH - self.admission.available_permits()
    }

    fn admit(&self) -> ApiResult<OwnedSemaphorePermit> {
        self.admission
            .clone()
            .try_acquire_owned()
            .map_err(|_| ApiError::QueueFull(QUEUE_DEPTH))
    }

    /// Occupy the worker, e.g. to drain it before a shutdown; admitted
    /// requests wait until the guard is dropped.
    pub async fn occupy(&self) -> OwnedMutexGuard<Detector> {
        self.detector.clone().lock_owned().await
    }

    pub async fn infer(&self, image: LabeledImage, inputs: Vec<UserInput>) -> ApiResult<Vec<Detection>> {
        let _permit = self.admit()?;
        let detector = self.detector.clone().lock_owned().await;
        tokio::task::spawn_blocking(move || detector.infer(&image, &inputs))
            .await
            .map_err(ApiError::internal)?
            .map_err(ApiError::internal)
    }
}

/// One open session. The mutex is the session's exclusive region: event
/// appends and snapshot writes for a session never interleave.
pub struct Session {
    pub record: SessionRecord,
    pub files: SessionFiles,
    pub state: Mutex<SessionState>,
}

#[derive(Debug, Default)]
pub struct SessionState {
    /// `t_ms` of the latest logged event.
    pub last_t_ms: Option<u64>,
}

pub struct AppState {
    pub config: ServerConfig,
    pub dataset: DatasetIndex,
    pub worker: Option<InferenceWorker>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Open the dataset, load the checkpoint (if any) and reload the
    /// sessions already on disk.
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        let dataset = DatasetIndex::open(&config.data)?;
        let worker = match &config.checkpoint {
            Some(path) => Some(InferenceWorker::load(path, &dataset.meta)?),
            None => None,
        };
        Self::with_worker(config, dataset, worker)
    }

    pub fn with_worker(config: ServerConfig, dataset: DatasetIndex, worker: Option<InferenceWorker>) -> Result<Self, ServerError> {
        std::fs::create_dir_all(&config.sessions_dir).map_err(|e| ServerError::Io(config.sessions_dir.clone(), e))?;
        let mut sessions = HashMap::new();
        for (record, files) in existing_sessions(&config.sessions_dir).map_err(|e| ServerError::Io(config.sessions_dir.clone(), e))? {
            let last_t_ms = files
                .read_events()
                .map_err(|e| ServerError::Io(files.events(), e))?
                .last()
                .map(|e| e.t_ms);
            let id = record.session_id.clone();
            sessions.insert(
                id,
                Arc::new(Session {
                    record,
                    files,
                    state: Mutex::new(SessionState { last_t_ms }),
                }),
            );
        }
        if !sessions.is_empty() {
            log::info!("reloaded {} session(s) from {}", sessions.len(), config.sessions_dir.display());
        }
        Ok(Self {
            config,
            dataset,
            worker,
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(0),
        })
    }

    pub async fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id:?}")))
    }

    /// Persist a new session and register it.
    pub async fn create_session(&self, dataset: String, mode: crate::store::Mode) -> ApiResult<Arc<Session>> {
        let mut sessions = self.sessions.write().await;
        loop {
            let created_at = now_ms();
            let n = self.next_id.fetch_add(1, Ordering::Relaxed);
            let id = format!("s{created_at:x}-{n:04x}");
            if sessions.contains_key(&id) {
                continue;
            }
            let files = SessionFiles::new(self.config.sessions_dir.join(&id));
            let record = SessionRecord {
                session_id: id.clone(),
                dataset: dataset.clone(),
                mode,
                created_at,
            };
            match files.create(&record) {
                Ok(()) => {
                    let session = Arc::new(Session {
                        record,
                        files,
                        state: Mutex::new(SessionState::default()),
                    });
                    sessions.insert(id, session.clone());
                    return Ok(session);
                }
                // Left over from an earlier process with the same clock reading.
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(ApiError::internal(e)),
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Core(#[from] c3det_core::CoreError),
    #[error(transparent)]
    Model(#[from] c3det_model::ModelError),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("binding port {0}: {1}")]
    Bind(u16, std::io::Error),
}
