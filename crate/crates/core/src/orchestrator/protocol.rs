//! Directory-based wire protocol between the orchestrator and a detector
//! backend.
//!
//! ```text
//! <step dir>/request.json      written by the orchestrator
//! <step dir>/predictions.json  written by the backend
//! <step dir>/status.json       {"ok": true} | {"ok": false, "message": ...}
//! <step dir>/response.ready    created by the backend after the files above
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::CocoDocument;
use crate::types::{BoundingBox, Detection, DropoutSampleSet, PredictedBox, TypeError};

pub const PROTOCOL_VERSION: u32 = 1;
pub const REQUEST_FILE: &str = "request.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const STATUS_FILE: &str = "status.json";
pub const READY_FILE: &str = "response.ready";

/// Tolerance between a reported detection and the mean of its samples.
pub const MEAN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: malformed JSON: {message}")]
    Json { path: String, message: String },
    #[error("backend did not create {READY_FILE}")]
    NotReady,
    #[error("backend reported failure: {0}")]
    BackendFailed(String),
    #[error("protocol version mismatch: expected {expected}, got {found}")]
    Version { expected: u32, found: u32 },
    #[error("prediction for image {0}, which was not requested")]
    UnexpectedImage(u64),
    #[error("image {0} listed twice in predictions")]
    DuplicateImage(u64),
    #[error("no predictions for requested image {0}")]
    MissingImage(u64),
    #[error("image {image_id}, detection {index}: {message}")]
    BadDetection {
        image_id: u64,
        index: usize,
        message: String,
    },
}

fn io_err(path: &Path, e: impl ToString) -> ProtocolError {
    ProtocolError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ProtocolError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| ProtocolError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ProtocolError> {
    let text = serde_json::to_string(value).expect("protocol types serialize");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Train, then predict the test split and the unlabeled pool.
    Query,
    /// Train, then predict the test split only.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub protocol_version: u32,
    pub phase: Phase,
    pub step: usize,
    pub seed: u64,
    pub num_classes: usize,
    pub categories: Vec<String>,
    /// Manifest path, for backends that need image files or pool metadata.
    pub dataset_manifest: String,
    /// Labeled set L in COCO layout; training data for this step.
    pub labeled: CocoDocument,
    pub pool_images: Vec<u64>,
    pub test_images: Vec<u64>,
    /// Dropout passes per pool detection; 0 means no samples.
    pub dropout_samples: usize,
    /// Opaque path a backend may use to persist state between steps.
    #[serde(default)]
    pub checkpoint: Option<String>,
    /// Backend-specific settings, passed through untouched.
    #[serde(default)]
    pub backend_options: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    pub probs: Vec<f64>,
    /// K rows of `(x_min, y_min, x_max, y_max, s, p_1..p_C)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
}

impl WireDetection {
    pub fn from_prediction(p: &PredictedBox) -> Self {
        Self {
            bbox: p.detection.bbox.as_array(),
            score: p.detection.score,
            probs: p.detection.class_probs.clone(),
            samples: p
                .samples
                .as_ref()
                .map(|s| s.samples().iter().map(Detection::features).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub image_id: u64,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub protocol_version: u32,
    pub images: Vec<ImagePredictions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusFile {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Validated backend output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendResponse {
    pub pool: BTreeMap<u64, Vec<PredictedBox>>,
    pub test: BTreeMap<u64, Vec<Detection>>,
}

impl BackendRequest {
    pub fn write(&self, dir: &Path) -> Result<(), ProtocolError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_json(&dir.join(REQUEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self, ProtocolError> {
        let req: Self = read_json(&dir.join(REQUEST_FILE))?;
        if req.protocol_version != PROTOCOL_VERSION {
            return Err(ProtocolError::Version {
                expected: PROTOCOL_VERSION,
                found: req.protocol_version,
            });
        }
        Ok(req)
    }
}

/// Writes the payload files, then the ready marker last.
pub fn write_response(
    dir: &Path,
    predictions: Option<&PredictionsFile>,
    status: &StatusFile,
) -> Result<(), ProtocolError> {
    if let Some(p) = predictions {
        write_json(&dir.join(PREDICTIONS_FILE), p)?;
    }
    write_json(&dir.join(STATUS_FILE), status)?;
    let ready = dir.join(READY_FILE);
    fs::write(&ready, b"").map_err(|e| io_err(&ready, e))
}

fn bad(image_id: u64, index: usize, message: impl ToString) -> ProtocolError {
    ProtocolError::BadDetection {
        image_id,
        index,
        message: message.to_string(),
    }
}

fn parse_detection(
    w: &WireDetection,
    num_classes: usize,
    image_id: u64,
    index: usize,
) -> Result<Detection, ProtocolError> {
    if w.probs.len() != num_classes {
        return Err(bad(
            image_id,
            index,
            format!("{} class probabilities, expected {num_classes}", w.probs.len()),
        ));
    }
    let b = w.bbox;
    let bbox = BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| bad(image_id, index, e))?;
    Detection::new(bbox, w.score, w.probs.clone()).map_err(|e| bad(image_id, index, e))
}

fn parse_samples(
    rows: &[Vec<f64>],
    mean: &Detection,
    num_classes: usize,
    image_id: u64,
    index: usize,
) -> Result<DropoutSampleSet, ProtocolError> {
    let width = 5 + num_classes;
    let samples = rows
        .iter()
        .map(|r| {
            if r.len() != width {
                return Err(bad(
                    image_id,
                    index,
                    format!("sample row of length {}, expected {width}", r.len()),
                ));
            }
            Detection::from_features(r).map_err(|e: TypeError| bad(image_id, index, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let set = DropoutSampleSet::from_samples(samples).map_err(|e| bad(image_id, index, e))?;
    let gap = set
        .mean()
        .features()
        .iter()
        .zip(mean.features())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > MEAN_TOLERANCE {
        return Err(bad(
            image_id,
            index,
            format!("detection differs from the mean of its samples by {gap}"),
        ));
    }
    Ok(set)
}

/// Reads and checks a backend's response against the request it answers.
pub fn read_response(dir: &Path, request: &BackendRequest) -> Result<BackendResponse, ProtocolError> {
    if !dir.join(READY_FILE).is_file() {
        return Err(ProtocolError::NotReady);
    }
    let status: StatusFile = read_json(&dir.join(STATUS_FILE))?;
    if !status.ok {
        return Err(ProtocolError::BackendFailed(
            status.message.unwrap_or_else(|| "no message".into()),
        ));
    }
    let preds: PredictionsFile = read_json(&dir.join(PREDICTIONS_FILE))?;
    if preds.protocol_version != PROTOCOL_VERSION {
        return Err(ProtocolError::Version {
            expected: PROTOCOL_VERSION,
            found: preds.protocol_version,
        });
    }
    let pool_ids: BTreeSet<u64> = request.pool_images.iter().copied().collect();
    let test_ids: BTreeSet<u64> = request.test_images.iter().copied().collect();
    let c = request.num_classes;
    let k = request.dropout_samples;

    let mut seen = BTreeSet::new();
    let mut response = BackendResponse::default();
    for img in &preds.images {
        let id = img.image_id;
        if !seen.insert(id) {
            return Err(ProtocolError::DuplicateImage(id));
        }
        let in_pool = pool_ids.contains(&id);
        let in_test = test_ids.contains(&id);
        if !in_pool && !in_test {
            return Err(ProtocolError::UnexpectedImage(id));
        }
        let mut pool_dets = Vec::new();
        let mut test_dets = Vec::new();
        for (i, w) in img.detections.iter().enumerate() {
            let det = parse_detection(w, c, id, i)?;
            if in_pool {
                let pb = match (&w.samples, k) {
                    (Some(rows), k) if k > 0 => {
                        if rows.len() != k {
                            return Err(bad(id, i, format!("{} samples, expected {k}", rows.len())));
                        }
                        PredictedBox::with_samples(parse_samples(rows, &det, c, id, i)?)
                    }
                    (None, k) if k > 0 => return Err(bad(id, i, format!("missing {k} dropout samples"))),
                    _ => PredictedBox::plain(det.clone()),
                };
                pool_dets.push(pb);
            }
            if in_test {
                test_dets.push(det);
            }
        }
        if in_pool {
            response.pool.insert(id, pool_dets);
        }
        if in_test {
            response.test.insert(id, test_dets);
        }
    }
    if let Some(id) = pool_ids.union(&test_ids).find(|id| !seen.contains(id)) {
        return Err(ProtocolError::MissingImage(*id));
    }
    Ok(response)
}
