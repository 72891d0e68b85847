//! Service configuration: one TOML file, then `EMOBIAS_*` environment
//! overrides.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use emobias_core::analysis::DEFAULT_TOP_K;
use emobias_core::SourceTypeNames;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: IpAddr,
    pub port: u16,
    /// Root of the per-session directories.
    pub data_dir: PathBuf,
    /// Pool directory holding `manifest.json`.
    pub pool_dir: PathBuf,
    pub pool_id: String,
    /// Optional feature cache built by `features build`.
    pub feature_cache: Option<PathBuf>,
    pub committee_dir: PathBuf,
    pub default_top_k: usize,
    pub source_names: SourceTypeNames,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: PathBuf::from("data/sessions"),
            pool_dir: PathBuf::from("data/pool"),
            pool_id: "default".to_string(),
            feature_cache: None,
            committee_dir: PathBuf::from("data/committee"),
            default_top_k: DEFAULT_TOP_K,
            source_names: SourceTypeNames::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path` (if given) and applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let env: HashMap<String, String> = std::env::vars().collect();
        Self::load_with_env(path, &env)
    }

    pub fn load_with_env(path: Option<&Path>, env: &HashMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            None => Self::default(),
        };
        cfg.apply_env(env)?;
        Ok(cfg)
    }

    fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env {
                name: name.to_string(),
                message: e.to_string(),
            })
        }
        for (name, v) in env {
            match name.as_str() {
                "EMOBIAS_HOST" => self.host = parsed(name, v)?,
                "EMOBIAS_PORT" => self.port = parsed(name, v)?,
                "EMOBIAS_DATA_DIR" => self.data_dir = PathBuf::from(v),
                "EMOBIAS_POOL_DIR" => self.pool_dir = PathBuf::from(v),
                "EMOBIAS_POOL_ID" => self.pool_id = v.clone(),
                "EMOBIAS_COMMITTEE_DIR" => self.committee_dir = PathBuf::from(v),
                "EMOBIAS_FEATURE_CACHE" => self.feature_cache = Some(PathBuf::from(v)),
                "EMOBIAS_DEFAULT_TOP_K" => self.default_top_k = parsed(name, v)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}
