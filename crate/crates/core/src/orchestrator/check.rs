//! Protocol conformance check: runs golden requests through a backend and
//! validates every response.

use std::fs;
use std::path::{Path, PathBuf};

use super::backend::Backend;
use super::protocol::{
    read_response, BackendRequest, Phase, PREDICTIONS_FILE, PROTOCOL_VERSION, READY_FILE, STATUS_FILE,
};
use crate::coco::{write_manifest, CocoDocument};
use crate::synthgen::{generate_dataset, Alphabet, GlyphSource, SplitSizes, SynthConfig};
use crate::types::DatasetManifest;

/// Dropout samples requested by the golden query request.
pub const GOLDEN_SAMPLES: usize = 3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.outcome.is_ok())
    }
}

/// Small rendered dataset under `<work>/dataset`.
pub fn golden_dataset(work: &Path) -> Result<(DatasetManifest, PathBuf), String> {
    let root = work.join("dataset");
    let config = SynthConfig {
        name: "golden".into(),
        splits: SplitSizes {
            train: 8,
            val: 0,
            test: 4,
        },
        glyphs: GlyphSource::Procedural {
            alphabet: Alphabet::Digits,
            per_class: 4,
        },
        seed: 7,
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&config, &root).map_err(|e| e.to_string())?;
    let path = write_manifest(&root, &manifest).map_err(|e| e.to_string())?;
    Ok((manifest, path))
}

/// The golden requests: a query step with samples, a query step without,
/// and a final step.
pub fn golden_requests(manifest: &DatasetManifest, manifest_path: &Path) -> Vec<(String, BackendRequest)> {
    let train = manifest.split("train");
    let (labeled, pool) = train.split_at(train.len() / 2);
    let test: Vec<u64> = manifest.split("test").iter().map(|r| r.image_id).collect();
    let base = |phase, step, k, pool_ids: Vec<u64>| BackendRequest {
        protocol_version: PROTOCOL_VERSION,
        phase,
        step,
        seed: 11,
        num_classes: manifest.num_classes(),
        categories: manifest.categories().to_vec(),
        dataset_manifest: manifest_path.display().to_string(),
        labeled: CocoDocument::from_records(manifest.categories(), labeled),
        pool_images: pool_ids,
        test_images: test.clone(),
        dropout_samples: k,
        checkpoint: None,
        backend_options: serde_json::Value::Null,
    };
    let pool_ids: Vec<u64> = pool.iter().map(|r| r.image_id).collect();
    vec![
        ("query_with_samples".into(), base(Phase::Query, 0, GOLDEN_SAMPLES, pool_ids.clone())),
        ("query_without_samples".into(), base(Phase::Query, 1, 0, pool_ids)),
        ("final".into(), base(Phase::Final, 2, 0, Vec::new())),
    ]
}

fn check_one(backend: &dyn Backend, dir: &Path, request: &BackendRequest) -> Result<(), String> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| e.to_string())?;
    }
    request.write(dir).map_err(|e| e.to_string())?;
    backend.execute(dir).map_err(|e| format!("backend: {e}"))?;
    let ready = dir.join(READY_FILE);
    if !ready.is_file() {
        return Err(format!("{READY_FILE} missing"));
    }
    let modified = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    let ready_time = modified(&ready);
    for f in [PREDICTIONS_FILE, STATUS_FILE] {
        if let (Some(t), Some(r)) = (modified(&dir.join(f)), ready_time) {
            if t > r {
                return Err(format!("{f} modified after {READY_FILE}"));
            }
        }
    }
    let response = read_response(dir, request).map_err(|e| e.to_string())?;
    if request.dropout_samples > 0 {
        let with = response.pool.values().flatten().filter(|p| p.samples.is_some()).count();
        let total = response.pool.values().flatten().count();
        if with != total {
            return Err(format!("{} of {total} pool detections carry samples", with));
        }
    }
    Ok(())
}

/// Runs each golden request in `<work>/step_%03d`.
pub fn protocol_check(backend: &dyn Backend, work: &Path) -> Result<CheckReport, String> {
    let (manifest, path) = golden_dataset(work)?;
    let results = golden_requests(&manifest, &path)
        .into_iter()
        .map(|(name, req)| {
            let dir = work.join(format!("step_{:03}", req.step));
            CheckResult {
                outcome: check_one(backend, &dir, &req),
                name,
            }
        })
        .collect();
    Ok(CheckReport { results })
}
