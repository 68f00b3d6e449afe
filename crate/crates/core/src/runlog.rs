//! Per-run AL curve records and their on-disk form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RUNLOG_JSON: &str = "runlog.json";
pub const RUNLOG_CSV: &str = "runlog.csv";

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: invalid runlog: {message}")]
    Parse { path: String, message: String },
    #[error("runlog {strategy}/seed {seed}: {message}")]
    Invalid {
        strategy: String,
        seed: u64,
        message: String,
    },
}

fn io_err(path: &Path, e: impl ToString) -> RunLogError {
    RunLogError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One point of an AL curve: performance of the model trained on the
/// labeled set before this step's query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub images_labeled: usize,
    pub instances_labeled: usize,
    pub map50: f64,
    #[serde(default)]
    pub queried: Vec<u64>,
    #[serde(default)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub strategy: String,
    pub seed: u64,
    pub dataset: String,
    #[serde(default = "default_detector")]
    pub detector: String,
    #[serde(default)]
    pub fingerprint: String,
    #[serde(default)]
    pub config: serde_json::Value,
    pub steps: Vec<StepRecord>,
}

fn default_detector() -> String {
    "sim".into()
}

impl RunLog {
    pub fn validate(&self) -> Result<(), RunLogError> {
        let bad = |message: String| RunLogError::Invalid {
            strategy: self.strategy.clone(),
            seed: self.seed,
            message,
        };
        for (i, s) in self.steps.iter().enumerate() {
            if s.step != i {
                return Err(bad(format!("step {} recorded at position {i}", s.step)));
            }
            if !s.map50.is_finite() || !(0.0..=1.0).contains(&s.map50) {
                return Err(bad(format!("step {i}: map50 {} outside [0, 1]", s.map50)));
            }
        }
        for w in self.steps.windows(2) {
            if w[1].images_labeled < w[0].images_labeled
                || w[1].instances_labeled < w[0].instances_labeled
            {
                return Err(bad(format!("labeled counts decrease at step {}", w[1].step)));
            }
        }
        Ok(())
    }

    /// `<out>/<strategy>/seed_<n>`.
    pub fn dir_in(out: &Path, strategy: &str, seed: u64) -> PathBuf {
        out.join(strategy).join(format!("seed_{seed}"))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "images_labeled", "instances_labeled", "map50", "seconds"])
            .expect("in-memory write");
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.images_labeled.to_string(),
                s.instances_labeled.to_string(),
                s.map50.to_string(),
                s.seconds.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    /// Writes `runlog.json` and `runlog.csv` into `dir`, replacing each
    /// file atomically.
    pub fn write(&self, dir: &Path) -> Result<(), RunLogError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("runlog serializes");
        write_atomic(&dir.join(RUNLOG_JSON), json.as_bytes())?;
        write_atomic(&dir.join(RUNLOG_CSV), self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, RunLogError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let log: RunLog = serde_json::from_str(&text).map_err(|e| RunLogError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        log.validate()?;
        Ok(log)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunLogError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Every `runlog.json` below the given roots, sorted by path.
pub fn find_runlogs(roots: &[PathBuf]) -> Result<Vec<RunLog>, RunLogError> {
    let mut paths = Vec::new();
    for root in roots {
        if root.is_file() {
            paths.push(root.clone());
            continue;
        }
        if !root.is_dir() {
            return Err(io_err(root, "no such directory"));
        }
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| io_err(root, e))?;
            if entry.file_type().is_file() && entry.file_name() == RUNLOG_JSON {
                paths.push(entry.into_path());
            }
        }
    }
    paths.iter().map(|p| RunLog::read(p)).collect()
}
