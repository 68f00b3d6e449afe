//! Layered experiment configuration.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, `--set
//! key.path=value` overrides, explicit command-line flags (applied by the
//! caller on the returned struct). The resolved configuration is written as
//! `config.resolved.json` together with its fingerprint, and that file loads
//! back to the same fingerprint.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orchestrator::ALConfig;
use crate::simbackend::{SimConfig, SimError};
use crate::synthgen::SynthConfig;

pub const RESOLVED_FILE: &str = "config.resolved.json";
/// Default dataset root when `al.manifest` is unset.
pub const DATA_ROOT_ENV: &str = "ALOD_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override {0:?}: expected key.path=value")]
    Override(String),
    #[error("{key}: {message}")]
    Key { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: stored fingerprint {stored} does not match {computed}")]
    Fingerprint {
        path: PathBuf,
        stored: String,
        computed: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_root: PathBuf,
    pub synth: SynthConfig,
    pub al: ALConfig,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_root: PathBuf::from("runs"),
            synth: SynthConfig::default(),
            al: ALConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

/// Keys that do not change what a run computes: locations, scheduling and
/// the per-run axes (seed, strategy).
const UNFINGERPRINTED: &[&[&str]] = &[
    &["output_root"],
    &["synth"],
    &["al", "manifest"],
    &["al", "seeds"],
    &["al", "strategies"],
    &["al", "jobs"],
    &["al", "record_wall_clock"],
    &["al", "query", "strategy"],
    &["al", "backend", "workdir"],
    &["al", "backend", "keep_work"],
    &["al", "backend", "timeout_secs"],
];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Resolved {
    fingerprint: String,
    config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synth
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.al.validate().map_err(ConfigError::Invalid)?;
        self.sim.validate().map_err(|e| match e {
            SimError::Config(m) => ConfigError::Invalid(format!("sim.{m}")),
            other => ConfigError::Invalid(other.to_string()),
        })?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the result-relevant keys.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for path in UNFINGERPRINTED {
            let (last, parents) = path.split_last().expect("non-empty path");
            let mut node = &mut value;
            for p in parents {
                node = &mut node[*p];
            }
            if let Some(map) = node.as_object_mut() {
                map.remove(*last);
            }
        }
        // serde_json maps are sorted, so this serialization is canonical.
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// What requests carry as `backend_options`.
    pub fn backend_options(&self) -> serde_json::Value {
        match &self.al.backend.options {
            Some(v) => v.clone(),
            None => serde_json::to_value(&self.sim).expect("sim config serializes"),
        }
    }

    /// Resolved snapshot embedded in runlogs. Output locations are left out
    /// so that reruns into another directory produce identical runlogs.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_root");
        }
        if let Some(backend) = value["al"]["backend"].as_object_mut() {
            backend.remove("workdir");
        }
        value
    }

    /// `al.manifest`, else `$ALOD_DATA_ROOT/manifest.json`. The file must exist.
    pub fn manifest_path(&self) -> Result<PathBuf, ConfigError> {
        let path = match (&self.al.manifest, env::var_os(DATA_ROOT_ENV)) {
            (Some(p), _) => p.clone(),
            (None, Some(root)) => PathBuf::from(root).join("manifest.json"),
            (None, None) => {
                return Err(ConfigError::Key {
                    key: "al.manifest".into(),
                    message: format!("not set and {DATA_ROOT_ENV} is undefined"),
                })
            }
        };
        if !path.is_file() {
            return Err(ConfigError::Key {
                key: "al.manifest".into(),
                message: format!("{} does not exist", path.display()),
            });
        }
        Ok(path)
    }

    /// Writes `config.resolved.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(RESOLVED_FILE);
        let io = |source| ConfigError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let resolved = Resolved {
            fingerprint: self.fingerprint(),
            config: self.clone(),
        };
        let text = serde_json::to_string_pretty(&resolved).expect("config serializes");
        fs::write(&path, text + "\n").map_err(io)?;
        Ok(path)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key.path=value` in `table`, creating intermediate tables. Values
/// are TOML literals; anything unparsable is taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::Key {
            key: parts[..=i].join("."),
            message: "not a table".into(),
        })?;
    }
    node.insert(last.to_string(), parse_value(raw));
    Ok(())
}

fn from_json_value(value: serde_json::Value, path: &Path) -> Result<ExperimentConfig, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| key_error(e, path))
}

fn key_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>, path: &Path) -> ConfigError {
    let key = e.path().to_string();
    if key == "." {
        ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.inner().to_string(),
        }
    } else {
        ConfigError::Key {
            key,
            message: e.inner().to_string(),
        }
    }
}

/// Loads a TOML file (or a `config.resolved.json`), applies overrides and
/// validates. `path = None` starts from the defaults.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table = toml::Table::new();
    let source = path.map(Path::to_path_buf).unwrap_or_default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        let is_json = p.extension().is_some_and(|e| e == "json");
        if is_json {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
            let config = if value.get("fingerprint").is_some() {
                let resolved: Resolved = serde_path_to_error::deserialize(value).map_err(|e| key_error(e, p))?;
                let computed = resolved.config.fingerprint();
                if computed != resolved.fingerprint {
                    return Err(ConfigError::Fingerprint {
                        path: p.to_path_buf(),
                        stored: resolved.fingerprint,
                        computed,
                    });
                }
                resolved.config
            } else {
                from_json_value(value, p)?
            };
            table = toml::Table::try_from(&config).map_err(|e| ConfigError::Parse {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
        } else {
            table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
        }
    }
    for assignment in overrides {
        apply_override(&mut table, assignment)?;
    }
    let value = serde_json::to_value(&table).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let config = from_json_value(value, &source)?;
    config.validate()?;
    Ok(config)
}
