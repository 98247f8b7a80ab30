//! Append-only directory of model checkpoints with an in-memory cache.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use candle_core::Device;
use texfx_core::net::{checkpoint, TransferNet};

use crate::api::{ApiError, CheckpointInfo, CheckpointList};

pub const EXTENSION: &str = "safetensors";

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub struct CheckpointStore {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Arc<TransferNet>>>,
    default: RwLock<Option<String>>,
}

impl CheckpointStore {
    /// Opens `dir`, creating it if needed. The default checkpoint is `preferred` when given,
    /// otherwise the most recently written one.
    pub fn open(dir: &Path, preferred: Option<&str>) -> Result<Self, ApiError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| ApiError::internal(format!("cannot create {}", dir.display())).with_detail(e.to_string()))?;
        let store = Self {
            dir: dir.to_path_buf(),
            cache: Mutex::new(HashMap::new()),
            default: RwLock::new(None),
        };
        let default = match preferred {
            Some(name) => {
                if !store.path(name)?.is_file() {
                    return Err(ApiError::not_found(format!("checkpoint {name} not found in {}", dir.display())));
                }
                Some(name.to_string())
            }
            None => store
                .scan()?
                .into_iter()
                .max_by(|a, b| (a.2, &a.0).cmp(&(b.2, &b.0)))
                .map(|(n, _, _)| n),
        };
        *store.default.write().unwrap() = default;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, name: &str) -> Result<PathBuf, ApiError> {
        if !valid_name(name) {
            return Err(ApiError::bad_request(format!("invalid checkpoint name {name:?}")));
        }
        Ok(self.dir.join(format!("{name}.{EXTENSION}")))
    }

    fn scan(&self) -> Result<Vec<(String, u64, SystemTime)>, ApiError> {
        let entries = std::fs::read_dir(&self.dir)
            .map_err(|e| ApiError::internal("cannot list checkpoints").with_detail(e.to_string()))?;
        let mut out = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXTENSION) {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if !valid_name(name) {
                continue;
            }
            let meta = entry.metadata().ok();
            let bytes = meta.as_ref().map_or(0, |m| m.len());
            let modified = meta.and_then(|m| m.modified().ok()).unwrap_or(SystemTime::UNIX_EPOCH);
            out.push((name.to_string(), bytes, modified));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    pub fn default_name(&self) -> Option<String> {
        self.default.read().unwrap().clone()
    }

    pub fn list(&self) -> Result<CheckpointList, ApiError> {
        let default = self.default_name();
        let checkpoints = self
            .scan()?
            .into_iter()
            .map(|(name, bytes, _)| CheckpointInfo {
                default: default.as_deref() == Some(name.as_str()),
                name,
                bytes,
            })
            .collect();
        Ok(CheckpointList { default, checkpoints })
    }

    /// Resolves `name` (or the default) and loads it once.
    pub fn get(&self, name: Option<&str>) -> Result<(String, Arc<TransferNet>), ApiError> {
        let name = match name {
            Some(n) => n.to_string(),
            None => self
                .default_name()
                .ok_or_else(|| ApiError::not_found("no checkpoint available"))?,
        };
        if let Some(net) = self.cache.lock().unwrap().get(&name) {
            return Ok((name, net.clone()));
        }
        let path = self.path(&name)?;
        if !path.is_file() {
            return Err(ApiError::not_found(format!("checkpoint {name} not found")));
        }
        let net = Arc::new(
            checkpoint::load(&path, &Device::Cpu)
                .map_err(|e| ApiError::internal(format!("cannot load checkpoint {name}")).with_detail(e.to_string()))?,
        );
        self.cache.lock().unwrap().insert(name.clone(), net.clone());
        Ok((name, net))
    }

    /// Writes a new checkpoint; existing names are never overwritten.
    pub fn add(&self, name: &str, net: TransferNet, make_default: bool) -> Result<(), ApiError> {
        let path = self.path(name)?;
        if path.exists() {
            return Err(ApiError::conflict(format!("checkpoint {name} already exists")));
        }
        checkpoint::save(&net, &path).map_err(|e| ApiError::internal("cannot write checkpoint").with_detail(e.to_string()))?;
        self.cache.lock().unwrap().insert(name.to_string(), Arc::new(net));
        if make_default {
            *self.default.write().unwrap() = Some(name.to_string());
        }
        Ok(())
    }
}
