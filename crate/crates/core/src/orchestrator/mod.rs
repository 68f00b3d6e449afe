//! The pool-based active-learning loop.
//!
//! One run is a (strategy, seed) pair. Each step writes a request directory,
//! waits for the backend, measures mAP@0.5 on the test split, and (except
//! after the last step) scores the pool and moves the top `Q` images into
//! the labeled set. The runlog is rewritten after every step, which is also
//! what a resumed run replays.

pub mod backend;
pub mod check;
pub mod protocol;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::CocoDocument;
use crate::eval::{map50, EvalError};
use crate::postproc::PostprocConfig;
use crate::query::{class_weights, score_pool, select_query, QueryConfig, QueryError, Strategy};
use crate::rng::{label_key, rng_for};
use crate::runlog::{RunLog, RunLogError, StepRecord, RUNLOG_JSON};
use crate::types::{DatasetManifest, PoolState, PredictedBox, TypeError};

pub use backend::{backend_from_command, Backend, BackendError, InProcessSim, SubprocessBackend, BUILTIN_SIM};
pub use protocol::{BackendRequest, BackendResponse, Phase, ProtocolError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Backend {
        step: usize,
        #[source]
        source: BackendError,
    },
    #[error("step {step}: {source}")]
    Protocol {
        step: usize,
        #[source]
        source: ProtocolError,
    },
    #[error("step {step}: evaluation failed: {source}")]
    Eval {
        step: usize,
        #[source]
        source: EvalError,
    },
    #[error("step {step}: query failed: {source}")]
    Query {
        step: usize,
        #[source]
        source: QueryError,
    },
    #[error("pool state: {0}")]
    Pool(#[from] TypeError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error("cannot resume {path}: {reason}")]
    Resume { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Short category used for one-line CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Backend { .. } => "backend",
            RunError::Protocol { .. } => "protocol",
            RunError::Eval { .. } => "eval",
            RunError::Query { .. } => "query",
            RunError::Pool(_) => "pool",
            RunError::RunLog(_) | RunError::Resume { .. } => "runlog",
            RunError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `builtin:sim` or a command line; `--request <dir>` is appended.
    pub command: String,
    /// Request directories go here; defaults to `<run dir>/work`.
    pub workdir: Option<PathBuf>,
    pub timeout_secs: u64,
    /// Keep request directories after a step succeeds.
    pub keep_work: bool,
    /// Sent as `backend_options`; the `[sim]` section is sent when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<serde_json::Value>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            command: BUILTIN_SIM.into(),
            workdir: None,
            timeout_secs: 3600,
            keep_work: false,
            options: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ALConfig {
    /// Path to the dataset `manifest.json`.
    pub manifest: Option<PathBuf>,
    pub pool_split: String,
    pub test_split: String,
    pub initial_labeled: usize,
    pub steps: usize,
    /// Score threshold applied to test predictions before mAP.
    pub eval_score_threshold: f64,
    pub detector: String,
    pub query: QueryConfig,
    pub postproc: PostprocConfig,
    pub backend: BackendConfig,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Worker threads for the run matrix.
    pub jobs: usize,
    /// When false every `seconds` field is 0 and reruns are byte-identical.
    pub record_wall_clock: bool,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            pool_split: "train".into(),
            test_split: "test".into(),
            initial_labeled: 100,
            steps: 8,
            eval_score_threshold: 0.05,
            detector: "sim".into(),
            query: QueryConfig::default(),
            postproc: PostprocConfig::default(),
            backend: BackendConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3],
            jobs: 1,
            record_wall_clock: true,
        }
    }
}

impl ALConfig {
    /// Errors name the offending key.
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_labeled == 0 {
            return Err("al.initial_labeled: must be at least 1".into());
        }
        if self.steps == 0 {
            return Err("al.steps: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.eval_score_threshold) {
            return Err(format!(
                "al.eval_score_threshold: {} is outside [0, 1]",
                self.eval_score_threshold
            ));
        }
        if self.strategies.is_empty() {
            return Err("al.strategies: empty".into());
        }
        if self.seeds.is_empty() {
            return Err("al.seeds: empty".into());
        }
        if self.jobs == 0 {
            return Err("al.jobs: must be at least 1".into());
        }
        if self.backend.timeout_secs == 0 {
            return Err("al.backend.timeout_secs: must be at least 1".into());
        }
        if self.backend.command.trim().is_empty() {
            return Err("al.backend.command: empty".into());
        }
        self.query.validate().map_err(|e| format!("al.query.{e}"))?;
        self.postproc.validate().map_err(|e| format!("al.postproc.{e}"))?;
        Ok(())
    }

    /// Pool size needed for `U_init + T·Q` images.
    pub fn required_pool(&self) -> usize {
        self.initial_labeled + self.steps * self.query.query_size
    }
}

/// Everything shared by the runs of one experiment.
pub struct RunPlan<'a> {
    pub al: &'a ALConfig,
    pub manifest: &'a DatasetManifest,
    /// Written into each request for external backends.
    pub manifest_path: String,
    pub backend_options: serde_json::Value,
    pub fingerprint: String,
    /// Resolved configuration stored in each runlog.
    pub config_snapshot: serde_json::Value,
    /// Runlogs go to `<out_root>/<strategy>/seed_<n>/`.
    pub out_root: PathBuf,
}

/// Seeded initial split of the pool into `L` (size `initial`) and `U`.
pub fn init_pool(pool_ids: &[u64], initial: usize, seed: u64) -> Result<PoolState, RunError> {
    if initial > pool_ids.len() {
        return Err(RunError::Config(format!(
            "al.initial_labeled: {initial} exceeds the pool of {} images",
            pool_ids.len()
        )));
    }
    let mut ids = pool_ids.to_vec();
    ids.sort_unstable();
    let mut rng = rng_for(&[seed, label_key("init")]);
    ids.shuffle(&mut rng);
    let labeled: BTreeSet<u64> = ids[..initial].iter().copied().collect();
    let unlabeled: BTreeSet<u64> = ids[initial..].iter().copied().collect();
    Ok(PoolState::new(labeled, unlabeled))
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunPlan<'_> {
    fn check(&self) -> Result<(Vec<u64>, Vec<u64>), RunError> {
        self.al.validate().map_err(RunError::Config)?;
        let pool: Vec<u64> = self.manifest.split(&self.al.pool_split).iter().map(|r| r.image_id).collect();
        let test: Vec<u64> = self.manifest.split(&self.al.test_split).iter().map(|r| r.image_id).collect();
        if test.is_empty() {
            return Err(RunError::Config(format!(
                "al.test_split: split {:?} is empty or missing",
                self.al.test_split
            )));
        }
        if pool.len() < self.al.required_pool() {
            return Err(RunError::Config(format!(
                "al: initial_labeled + steps * query_size = {} exceeds the pool of {} images in split {:?}",
                self.al.required_pool(),
                pool.len(),
                self.al.pool_split
            )));
        }
        Ok((pool, test))
    }

    fn work_dir(&self, strategy: Strategy, seed: u64, step: usize) -> PathBuf {
        let base = match &self.al.backend.workdir {
            Some(w) => w.join(strategy.name()).join(format!("seed_{seed}")),
            None => RunLog::dir_in(&self.out_root, strategy.name(), seed).join("work"),
        };
        base.join(format!("step_{step:03}"))
    }

    fn empty_log(&self, strategy: Strategy, seed: u64) -> RunLog {
        RunLog {
            strategy: strategy.name().into(),
            seed,
            dataset: self.manifest.name().into(),
            detector: self.al.detector.clone(),
            fingerprint: self.fingerprint.clone(),
            config: self.config_snapshot.clone(),
            steps: Vec::new(),
        }
    }

    /// Loads a partial runlog and replays its queries onto `pool`.
    fn resume(&self, path: &Path, strategy: Strategy, seed: u64, pool: &mut PoolState) -> Result<RunLog, RunError> {
        let fail = |reason: String| RunError::Resume {
            path: path.to_path_buf(),
            reason,
        };
        let log = RunLog::read(path)?;
        if log.fingerprint != self.fingerprint {
            return Err(fail(format!(
                "configuration fingerprint {} differs from {}",
                log.fingerprint, self.fingerprint
            )));
        }
        if log.strategy != strategy.name() || log.seed != seed {
            return Err(fail(format!("runlog is for {} seed {}", log.strategy, log.seed)));
        }
        if log.steps.len() > self.al.steps + 1 {
            return Err(fail(format!("{} steps recorded, expected at most {}", log.steps.len(), self.al.steps + 1)));
        }
        for (t, rec) in log.steps.iter().enumerate() {
            if rec.step != t || rec.images_labeled != pool.labeled().len() {
                return Err(fail(format!("step {t} does not match the replayed pool state")));
            }
            if t < self.al.steps {
                pool.apply_query(t, &rec.queried).map_err(|e| fail(format!("step {t}: {e}")))?;
            }
        }
        Ok(log)
    }
}

/// Runs (or resumes) one strategy/seed pair to completion.
pub fn run_al(plan: &RunPlan, backend: &dyn Backend, strategy: Strategy, seed: u64) -> Result<RunLog, RunError> {
    let (pool_ids, test_ids) = plan.check()?;
    let al = plan.al;
    let manifest = plan.manifest;
    let test_records = manifest.split(&al.test_split);
    let mut query = al.query.clone();
    query.strategy = strategy;
    let k = if strategy.needs_samples() { query.dropout_samples } else { 0 };
    let eval_post = PostprocConfig {
        score_threshold: al.eval_score_threshold,
        ..al.postproc
    };

    let mut pool = init_pool(&pool_ids, al.initial_labeled, seed)?;
    let run_dir = RunLog::dir_in(&plan.out_root, strategy.name(), seed);
    let existing = run_dir.join(RUNLOG_JSON);
    let mut log = if existing.is_file() {
        let log = plan.resume(&existing, strategy, seed, &mut pool)?;
        log::info!("{}/seed_{seed}: resuming at step {}", strategy.name(), log.steps.len());
        log
    } else {
        plan.empty_log(strategy, seed)
    };

    for t in log.steps.len()..=al.steps {
        let started = Instant::now();
        let phase = if t < al.steps { Phase::Query } else { Phase::Final };
        let labeled = pool.labeled();
        let labeled_records = labeled.iter().map(|id| manifest.image(*id).ok_or(TypeError::UnknownImage(*id)));
        let labeled_records = labeled_records.collect::<Result<Vec<_>, _>>()?;
        let request = BackendRequest {
            protocol_version: protocol::PROTOCOL_VERSION,
            phase,
            step: t,
            seed,
            num_classes: manifest.num_classes(),
            categories: manifest.categories().to_vec(),
            dataset_manifest: plan.manifest_path.clone(),
            labeled: CocoDocument::from_records(manifest.categories(), labeled_records.iter().copied()),
            pool_images: match phase {
                Phase::Query => pool.unlabeled().iter().copied().collect(),
                Phase::Final => Vec::new(),
            },
            test_images: test_ids.clone(),
            dropout_samples: match phase {
                Phase::Query => k,
                Phase::Final => 0,
            },
            checkpoint: None,
            backend_options: plan.backend_options.clone(),
        };
        let dir = plan.work_dir(strategy, seed, t);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        request.write(&dir).map_err(|source| RunError::Protocol { step: t, source })?;
        backend.execute(&dir).map_err(|source| RunError::Backend { step: t, source })?;
        let response = protocol::read_response(&dir, &request).map_err(|source| RunError::Protocol { step: t, source })?;

        let test_preds = response
            .test
            .into_iter()
            .map(|(id, dets)| {
                let boxes: Vec<PredictedBox> = dets.into_iter().map(PredictedBox::plain).collect();
                let kept = eval_post.apply(&boxes).into_iter().map(|p| p.detection).collect();
                (id, kept)
            })
            .collect();
        let map = map50(&test_preds, test_records, manifest.num_classes())
            .map_err(|source| RunError::Eval { step: t, source })?;

        let mut queried = Vec::new();
        if phase == Phase::Query {
            let pool_preds = response
                .pool
                .into_iter()
                .map(|(id, p)| (id, al.postproc.apply(&p)))
                .collect();
            let weights = if query.class_weighting {
                Some(class_weights(manifest, pool.labeled())?)
            } else {
                None
            };
            let mut rng = rng_for(&[seed, t as u64, label_key("query")]);
            let q = |source| RunError::Query { step: t, source };
            let scores = score_pool(&pool_preds, &query, weights.as_deref(), &mut rng).map_err(q)?;
            queried = select_query(&scores, query.query_size, &mut rng).map_err(q)?;
        }
        let record = StepRecord {
            step: t,
            images_labeled: pool.labeled().len(),
            instances_labeled: manifest.count_instances(pool.labeled())?,
            map50: map,
            queried: queried.clone(),
            seconds: if al.record_wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        if phase == Phase::Query {
            pool.apply_query(t, &queried)?;
        }
        log.steps.push(record);
        log.write(&run_dir)?;
        if !al.backend.keep_work {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        log::debug!("{}/seed_{seed} step {t}: mAP50 {map:.4}", strategy.name());
    }
    if !al.backend.keep_work && al.backend.workdir.is_none() {
        let work = run_dir.join("work");
        if work.is_dir() {
            let _ = fs::remove_dir_all(&work);
        }
    }
    Ok(log)
}

/// Outcome of one cell of the strategy × seed matrix.
pub struct RunOutcome {
    pub strategy: Strategy,
    pub seed: u64,
    pub result: Result<RunLog, RunError>,
}

/// Runs every strategy/seed pair on `al.jobs` threads. A failing run does
/// not stop the others. Results follow strategy-major, seed-minor order.
pub fn run_matrix(plan: &RunPlan, backend: &dyn Backend) -> Result<Vec<RunOutcome>, RunError> {
    plan.check()?;
    let cells: Vec<(Strategy, u64)> = plan
        .al
        .strategies
        .iter()
        .flat_map(|&s| plan.al.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.al.jobs)
        .build()
        .map_err(|e| RunError::Config(format!("al.jobs: {e}")))?;
    Ok(threads.install(|| {
        cells
            .par_iter()
            .map(|&(strategy, seed)| {
                let result = run_al(plan, backend, strategy, seed);
                if let Err(e) = &result {
                    log::info!("{}/seed_{seed} failed: {e}", strategy.name());
                }
                RunOutcome { strategy, seed, result }
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests;
