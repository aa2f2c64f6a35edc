use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{parse_env_config, ConfigError, EnvConfig};
use crate::envs::{Env, EnvError};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("environment '{0}' is already registered")]
    Duplicate(String),
    #[error("unknown environment '{0}'")]
    Unknown(String),
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Maps env ids to validated configs; every `make` builds an independent
/// instance.
#[derive(Clone, Debug, Default)]
pub struct EnvRegistry {
    envs: BTreeMap<String, Arc<EnvConfig>>,
}

impl EnvRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the shipped fixtures.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        for (name, text) in crate::fixtures::BUILTIN {
            let cfg = parse_env_config(text).unwrap_or_else(|e| panic!("shipped fixture {name} is invalid: {e}"));
            reg.register(cfg).expect("shipped fixture ids are unique");
        }
        reg
    }

    /// Loads every `*.cfg` file in `dir`, in file-name order.
    pub fn from_dir(dir: &Path) -> Result<Self, RegistryError> {
        let io = |source| RegistryError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
            .collect();
        paths.sort();
        let mut reg = Self::new();
        for p in paths {
            let path = p.display().to_string();
            let text = std::fs::read_to_string(&p)
                .map_err(|source| RegistryError::Io { path: path.clone(), source })?;
            let cfg = parse_env_config(&text).map_err(|source| RegistryError::Config { path, source })?;
            reg.register(cfg)?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, cfg: EnvConfig) -> Result<(), RegistryError> {
        if self.envs.contains_key(&cfg.env_id) {
            return Err(RegistryError::Duplicate(cfg.env_id));
        }
        self.envs.insert(cfg.env_id.clone(), Arc::new(cfg));
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.envs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn config(&self, id: &str) -> Result<Arc<EnvConfig>, RegistryError> {
        self.envs.get(id).cloned().ok_or_else(|| RegistryError::Unknown(id.to_owned()))
    }

    pub fn make(&self, id: &str) -> Result<Env, RegistryError> {
        Ok(Env::new(self.config(id)?)?)
    }

    /// Instance whose config seed is replaced by `seed`.
    pub fn make_seeded(&self, id: &str, seed: u64) -> Result<Env, RegistryError> {
        let mut cfg = (*self.config(id)?).clone();
        cfg.seed = seed;
        Ok(Env::new(Arc::new(cfg))?)
    }
}
