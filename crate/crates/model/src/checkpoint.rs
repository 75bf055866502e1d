//! Single-file JSON checkpoints: format version, model configuration, class
//! catalog and every parameter tensor keyed by module path.

use std::collections::BTreeMap;
use std::path::Path;

use c3det_autograd::Tensor;
use c3det_core::dataset::write_bytes_atomic;
use c3det_core::ClassCatalog;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Training provenance stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub step: usize,
    /// Validation mAP@0.5 at the configured click budget, if measured.
    pub val_map: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub catalog: ClassCatalog,
    pub info: CheckpointInfo,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, catalog: &ClassCatalog, params: &ParamStore<f32>, info: CheckpointInfo) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            catalog: catalog.clone(),
            info,
            params: params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn param_store(&self) -> Result<ParamStore<f32>> {
        let mut map = BTreeMap::new();
        for (k, t) in &self.params {
            map.insert(k.clone(), Tensor::from_vec(&t.shape, t.data.clone())?);
        }
        let store = ParamStore::from_map(map);
        store.check_layout(&self.config, self.catalog.len())?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).map_err(|e| ModelError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        write_bytes_atomic(path, &bytes)?;
        Ok(())
    }

    /// Read a checkpoint; when `expected` is given the class catalogs must match.
    pub fn load(path: &Path, expected: Option<&ClassCatalog>) -> Result<Self> {
        let fail = |reason: String| ModelError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| fail(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {} (expected {CHECKPOINT_VERSION})", ckpt.version)));
        }
        if let Some(cat) = expected {
            if cat != &ckpt.catalog {
                return Err(fail(format!(
                    "class catalog mismatch: checkpoint has {:?} ({} classes), dataset has {:?} ({} classes)",
                    ckpt.catalog.names(),
                    ckpt.catalog.len(),
                    cat.names(),
                    cat.len()
                )));
            }
        }
        ckpt.config.validate()?;
        ckpt.param_store().map_err(|e| fail(e.to_string()))?;
        Ok(ckpt)
    }
}
