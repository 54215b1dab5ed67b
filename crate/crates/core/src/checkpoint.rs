//! Single-file JSON model archives with a hash manifest, plus an advisory
//! lock for shared output directories.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeVae, ModelConfig};
use crate::tensor::Real;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub vocab_hash: String,
    pub config_hash: String,
    pub params_hash: String,
    pub epochs_trained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    /// `<namespace>/<name>`, e.g. `flow/flow.0.psi.2.weight`.
    pub key: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Vec<StoredParam>,
}

fn key_of<T: Real>(model: &DeVae<T>, i: usize) -> String {
    let e = &model.store.entries()[i];
    format!("{}/{}", e.group.namespace(), e.name)
}

impl Checkpoint {
    pub fn capture<T: Real>(model: &DeVae<T>, vocab_hash: &str, config_hash: &str, epochs_trained: usize) -> Self {
        let params = model
            .store
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| StoredParam {
                key: key_of(model, i),
                rows: e.value.nrows(),
                cols: e.value.ncols(),
                values: e.value.iter().map(|v| v.f64()).collect(),
            })
            .collect();
        Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                model_config: model.config.clone(),
                vocab_hash: vocab_hash.to_owned(),
                config_hash: config_hash.to_owned(),
                params_hash: model.full_hash(),
                epochs_trained,
            },
            params,
        }
    }

    /// Rebuilds the model and checks every stored hash.
    pub fn restore<T: Real>(&self, expected_vocab_hash: Option<&str>) -> Result<DeVae<T>> {
        let m = &self.manifest;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint format {}", m.format_version)));
        }
        if let Some(v) = expected_vocab_hash {
            if v != m.vocab_hash {
                return Err(Error::HashMismatch {
                    what: "vocabulary".into(),
                    expected: m.vocab_hash.clone(),
                    found: v.to_owned(),
                });
            }
        }
        let mut model = DeVae::<T>::new(m.model_config.clone())?;
        if self.params.len() != model.store.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            let key = key_of(&model, i);
            let id = crate::tensor::ParamId(i);
            let shape = model.store.get(id).dim();
            if p.key != key || (p.rows, p.cols) != shape || p.values.len() != p.rows * p.cols {
                return Err(Error::Config(format!("parameter {} does not match model layout ({key})", p.key)));
            }
            let dst = model.store.get_mut(id);
            for (d, v) in dst.iter_mut().zip(&p.values) {
                *d = T::c(*v);
            }
        }
        let found = model.full_hash();
        if found != m.params_hash {
            return Err(Error::HashMismatch { what: "parameters".into(), expected: m.params_hash.clone(), found });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(self)?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Exclusive lock held while the guard lives.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE: &'static str = ".devae.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Config(format!("{} is locked by another process ({})", dir.display(), path.display()))
            } else {
                Error::io(&path, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
