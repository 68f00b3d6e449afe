//! Statistical stand-in for a trained detector.
//!
//! Per-class competence grows with the labeled instance count as
//! `κ = 1 − exp(−n/τ)`. Predictions on an image are ground-truth boxes that
//! are missed, jittered and given Dirichlet class probabilities according to
//! κ, plus false positives whose number shrinks as competence grows. Low
//! competence means flat class probabilities, which is what makes
//! uncertainty queries informative in closed-loop runs. Nothing here models
//! a real network.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{load_manifest, CocoError};
use crate::orchestrator::protocol::{
    write_response, BackendRequest, ImagePredictions, PredictionsFile, ProtocolError, StatusFile,
    WireDetection, PROTOCOL_VERSION,
};
use crate::rng::{label_key, rng_for};
use crate::types::{Annotation, BoundingBox, DatasetManifest, Detection, DropoutSampleSet, ImageRecord, PredictedBox};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("dataset manifest: {0}")]
    Manifest(#[from] CocoError),
    #[error("request references image {0}, which is not in the manifest")]
    UnknownImage(u64),
    #[error("request has {request} classes but the manifest has {manifest}")]
    ClassCount { request: usize, manifest: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Instances per class at which competence reaches 1 − 1/e.
    pub tau: f64,
    /// Fraction of detections missed regardless of competence.
    pub miss_floor: f64,
    /// Box jitter std as a fraction of the box's larger side, at κ = 0.
    pub sigma_loc: f64,
    /// Extra Dirichlet concentration on the true class at κ = 1.
    pub concentration: f64,
    /// Expected false positives per image at zero competence.
    pub fp_rate: f64,
    /// Scale of dropout-sample perturbations at κ = 0.
    pub dropout_jitter: f64,
    /// Mixed into every random stream.
    pub salt: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tau: 100.0,
            miss_floor: 0.0,
            sigma_loc: 0.15,
            concentration: 15.0,
            fp_rate: 1.0,
            dropout_jitter: 0.2,
            salt: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(0.0..=1.0).contains(&self.miss_floor) {
            return bad("miss_floor must lie in [0, 1]");
        }
        for (name, v) in [
            ("sigma_loc", self.sigma_loc),
            ("concentration", self.concentration),
            ("fp_rate", self.fp_rate),
            ("dropout_jitter", self.dropout_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Per-class competence κ_c ∈ [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Competence(pub Vec<f64>);

impl Competence {
    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

pub fn competence_from_counts(counts: &[usize], config: &SimConfig) -> Competence {
    Competence(
        counts
            .iter()
            .map(|&n| 1.0 - (-(n as f64) / config.tau).exp())
            .collect(),
    )
}

/// Competence from the category ids of the labeled instances.
pub fn fit<I: IntoIterator<Item = usize>>(
    labeled_categories: I,
    num_classes: usize,
    config: &SimConfig,
) -> Competence {
    let mut counts = vec![0usize; num_classes];
    for c in labeled_categories {
        if c < num_classes {
            counts[c] += 1;
        }
    }
    competence_from_counts(&counts, config)
}

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let sum: f64 = g.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        // All draws underflowed: fall back to the concentration profile.
        let total: f64 = alpha.iter().sum();
        return alpha.iter().map(|a| a / total).collect();
    }
    g.iter_mut().for_each(|x| *x /= sum);
    g
}

fn gauss<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// Orders, clips and minimally pads jittered corners into a valid box.
fn settle_box(mut c: [f64; 4], width: f64, height: f64) -> BoundingBox {
    if c[0] > c[2] {
        c.swap(0, 2);
    }
    if c[1] > c[3] {
        c.swap(1, 3);
    }
    let fit = |lo: f64, hi: f64, limit: f64| {
        let (mut lo, mut hi) = (lo.clamp(0.0, limit), hi.clamp(0.0, limit));
        if hi - lo < 1.0 {
            let mid = ((lo + hi) / 2.0).clamp(0.5, limit - 0.5);
            lo = mid - 0.5;
            hi = mid + 0.5;
        }
        (lo, hi)
    };
    let (x0, x1) = fit(c[0], c[2], width);
    let (y0, y1) = fit(c[1], c[3], height);
    BoundingBox::new(x0, y0, x1, y1).expect("settled box is valid")
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// One dropout pass: the base detection perturbed with scale ∝ (1 − κ).
fn perturb<R: Rng + ?Sized>(
    base: &Detection,
    kappa: f64,
    config: &SimConfig,
    img: &ImageRecord,
    rng: &mut R,
) -> Detection {
    let u = config.dropout_jitter * (1.0 - kappa);
    let b = base.bbox;
    let side = b.width().max(b.height());
    let corners = b.as_array().map(|v| v + gauss(u * 0.5 * side, rng));
    let bbox = settle_box(corners, img.width as f64, img.height as f64);
    let score = (base.score + gauss(u * 0.5, rng)).clamp(0.0, 1.0);
    let probs = renormalize(
        base.class_probs
            .iter()
            .map(|&p| (p * (gauss(u * 3.0, rng)).exp()).max(1e-12))
            .collect(),
    );
    Detection::new(bbox, score, probs).expect("perturbed detection is valid")
}

fn with_samples<R: Rng + ?Sized>(
    base: Detection,
    kappa: f64,
    k: usize,
    config: &SimConfig,
    img: &ImageRecord,
    rng: &mut R,
) -> PredictedBox {
    if k == 0 {
        return PredictedBox::plain(base);
    }
    let samples = (0..k).map(|_| perturb(&base, kappa, config, img, rng)).collect();
    PredictedBox::with_samples(DropoutSampleSet::from_samples(samples).expect("aligned samples"))
}

/// Simulated detection of one ground-truth instance, or `None` if missed.
pub fn detect_instance<R: Rng + ?Sized>(
    ann: &Annotation,
    kappa: f64,
    num_classes: usize,
    config: &SimConfig,
    width: f64,
    height: f64,
    rng: &mut R,
) -> Option<Detection> {
    let p_det = (0.1 + 0.9 * kappa) * (1.0 - config.miss_floor);
    if rng.random::<f64>() >= p_det {
        return None;
    }
    let b = ann.bbox;
    let sd = config.sigma_loc * (1.0 - kappa) * b.width().max(b.height());
    let corners = b.as_array().map(|v| v + gauss(sd, rng));
    let bbox = settle_box(corners, width, height);
    let mut alpha = vec![1.0; num_classes];
    alpha[ann.category_id] += config.concentration * kappa;
    let probs = dirichlet(&alpha, rng);
    let p_max = probs.iter().copied().fold(0.0, f64::max);
    let score = (p_max * (0.5 + 0.5 * kappa)).clamp(0.0, 1.0);
    Some(Detection::new(bbox, score, probs).expect("simulated detection is valid"))
}

/// Simulated predictions for one image. Deterministic in
/// `(seed, image id, step, salt)`; dropout samples come from a separate
/// stream so the base detections do not depend on `k`.
pub fn predict(
    img: &ImageRecord,
    competence: &Competence,
    config: &SimConfig,
    k: usize,
    seed: u64,
    step: usize,
) -> Vec<PredictedBox> {
    let key = [seed, img.image_id, step as u64, config.salt];
    let mut rng = rng_for(&[key[0], key[1], key[2], key[3], label_key("detect")]);
    let mut sample_rng = rng_for(&[key[0], key[1], key[2], key[3], label_key("dropout")]);
    let c = competence.0.len();
    let (w, h) = (img.width as f64, img.height as f64);
    let mut out = Vec::new();

    for ann in &img.annotations {
        let kappa = competence.0[ann.category_id];
        if let Some(det) = detect_instance(ann, kappa, c, config, w, h, &mut rng) {
            out.push(with_samples(det, kappa, k, config, img, &mut sample_rng));
        }
    }

    let mean_kappa = competence.mean();
    let lambda = config.fp_rate * (1.0 - mean_kappa);
    let n_fp = if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..n_fp {
        let bw = rng.random_range(0.04..0.3) * w;
        let bh = rng.random_range(0.04..0.3) * h;
        let x0 = rng.random_range(0.0..(w - bw).max(1e-9));
        let y0 = rng.random_range(0.0..(h - bh).max(1e-9));
        let bbox = settle_box([x0, y0, x0 + bw, y0 + bh], w, h);
        let probs = dirichlet(&vec![10.0; c], &mut rng);
        let score = 0.6 * rng.random::<f64>();
        let det = Detection::new(bbox, score, probs).expect("simulated detection is valid");
        out.push(with_samples(det, mean_kappa, k, config, img, &mut sample_rng));
    }
    out
}

fn answer(
    request: &BackendRequest,
    manifest: &DatasetManifest,
) -> Result<PredictionsFile, SimError> {
    if request.num_classes != manifest.num_classes() {
        return Err(SimError::ClassCount {
            request: request.num_classes,
            manifest: manifest.num_classes(),
        });
    }
    let config: SimConfig = if request.backend_options.is_null() {
        SimConfig::default()
    } else {
        serde_json::from_value(request.backend_options.clone())
            .map_err(|e| SimError::Config(e.to_string()))?
    };
    config.validate()?;
    let competence = fit(
        request.labeled.annotations.iter().map(|a| a.category_id),
        request.num_classes,
        &config,
    );
    let mut images = Vec::new();
    let mut emit = |ids: &[u64], k: usize| -> Result<(), SimError> {
        for &id in ids {
            let img = manifest.image(id).ok_or(SimError::UnknownImage(id))?;
            let preds = predict(img, &competence, &config, k, request.seed, request.step);
            images.push(ImagePredictions {
                image_id: id,
                detections: preds.iter().map(WireDetection::from_prediction).collect(),
            });
        }
        Ok(())
    };
    emit(&request.pool_images, request.dropout_samples)?;
    let pool: std::collections::BTreeSet<u64> = request.pool_images.iter().copied().collect();
    let test_only: Vec<u64> = request
        .test_images
        .iter()
        .copied()
        .filter(|id| !pool.contains(id))
        .collect();
    emit(&test_only, 0)?;
    Ok(PredictionsFile {
        protocol_version: PROTOCOL_VERSION,
        images,
    })
}

/// Serves one request directory: reads `request.json`, writes predictions
/// and status, then the ready marker. Failures are reported through
/// `status.json`; the returned error only covers failing to write it.
///
/// `manifest` short-circuits loading the dataset named in the request.
pub fn serve_request_dir(dir: &Path, manifest: Option<&DatasetManifest>) -> Result<(), SimError> {
    let result = (|| -> Result<PredictionsFile, SimError> {
        let request = BackendRequest::read(dir)?;
        match manifest {
            Some(m) => answer(&request, m),
            None => {
                let loaded = load_manifest(Path::new(&request.dataset_manifest))?;
                answer(&request, &loaded)
            }
        }
    })();
    match result {
        Ok(p) => write_response(dir, Some(&p), &StatusFile { ok: true, message: None })?,
        Err(e) => write_response(
            dir,
            None,
            &StatusFile {
                ok: false,
                message: Some(e.to_string()),
            },
        )?,
    }
    Ok(())
}

/// Test-split predictions keyed by image id, without samples.
pub fn predict_split(
    images: &[ImageRecord],
    competence: &Competence,
    config: &SimConfig,
    seed: u64,
    step: usize,
) -> BTreeMap<u64, Vec<Detection>> {
    images
        .iter()
        .map(|img| {
            let d = predict(img, competence, config, 0, seed, step)
                .into_iter()
                .map(|p| p.detection)
                .collect();
            (img.image_id, d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::map50;
    use crate::query::entropy;

    fn image(id: u64, boxes: &[([f64; 4], usize)]) -> ImageRecord {
        ImageRecord {
            image_id: id,
            file_name: String::new(),
            width: 300,
            height: 300,
            annotations: boxes
                .iter()
                .map(|&(b, c)| Annotation {
                    bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
                    category_id: c,
                })
                .collect(),
        }
    }

    fn images(n: u64) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| {
                let x = (i % 7) as f64 * 30.0;
                image(
                    i,
                    &[
                        ([x, 10.0, x + 30.0, 50.0], (i % 10) as usize),
                        ([200.0, x + 20.0, 240.0, x + 70.0], ((i + 3) % 10) as usize),
                    ],
                )
            })
            .collect()
    }

    #[test]
    fn fit_examples() {
        let cfg = SimConfig::default();
        let k = fit(std::iter::repeat_n(1, 100), 3, &cfg);
        assert_eq!(k.0[0], 0.0);
        assert!((k.0[1] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((k.0[1] - 0.6321).abs() < 1e-4);
        let mut prev = 0.0;
        for n in [0usize, 1, 10, 100, 1000, 100_000] {
            let v = competence_from_counts(&[n], &cfg).0[0];
            assert!(v >= prev && v <= 1.0);
            prev = v;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn deterministic_per_key() {
        let cfg = SimConfig::default();
        let comp = Competence(vec![0.3; 10]);
        let img = &images(1)[0];
        let a = predict(img, &comp, &cfg, 5, 7, 2);
        assert_eq!(a, predict(img, &comp, &cfg, 5, 7, 2));
        assert_ne!(a, predict(img, &comp, &cfg, 5, 7, 3));
        // Base detections are independent of the sample count.
        let plain = predict(img, &comp, &cfg, 0, 7, 2);
        assert_eq!(plain.len(), a.len());
    }

    #[test]
    fn perfect_limit_gives_map_one() {
        let cfg = SimConfig {
            sigma_loc: 0.0,
            fp_rate: 0.0,
            concentration: 1e9,
            dropout_jitter: 0.0,
            ..SimConfig::default()
        };
        let comp = competence_from_counts(&[1_000_000; 10], &cfg);
        assert!(comp.0.iter().all(|&k| k == 1.0));
        let imgs = images(50);
        for img in &imgs {
            let p = predict(img, &comp, &cfg, 3, 0, 0);
            assert_eq!(p.len(), img.annotations.len());
            for (d, a) in p.iter().zip(&img.annotations) {
                assert_eq!(d.detection.bbox, a.bbox);
                assert_eq!(d.detection.predicted_class(), a.category_id);
                assert!(d.detection.class_probs[a.category_id] > 1.0 - 1e-6);
            }
        }
        let preds = predict_split(&imgs, &comp, &cfg, 0, 0);
        assert_eq!(map50(&preds, &imgs, 10).unwrap(), 1.0);
    }

    #[test]
    fn untrained_with_full_miss_floor_only_false_positives() {
        let cfg = SimConfig {
            miss_floor: 1.0,
            fp_rate: 3.0,
            ..SimConfig::default()
        };
        let comp = Competence(vec![0.0; 10]);
        let mut total = 0;
        for img in &images(40) {
            for p in predict(img, &comp, &cfg, 0, 1, 0) {
                assert!(p.detection.score <= 0.6);
                total += 1;
            }
        }
        assert!(total > 0);
    }

    #[test]
    fn entropy_decreases_with_competence() {
        let cfg = SimConfig::default();
        let img = image(0, &[([10.0, 10.0, 60.0, 60.0], 4)]);
        let ann = &img.annotations[0];
        let mean_entropy = |kappa: f64| {
            let mut rng = rng_for(&[kappa.to_bits()]);
            let mut sum = 0.0;
            let mut n = 0usize;
            while n < 10_000 {
                if let Some(d) = detect_instance(ann, kappa, 10, &cfg, 300.0, 300.0, &mut rng) {
                    sum += entropy(&d);
                    n += 1;
                }
            }
            sum / n as f64
        };
        let (lo, mid, hi) = (mean_entropy(0.1), mean_entropy(0.5), mean_entropy(0.9));
        assert!(lo > mid && mid > hi, "{lo} {mid} {hi}");
    }

    #[test]
    fn samples_average_to_reported_detection() {
        let cfg = SimConfig::default();
        let comp = Competence(vec![0.2; 10]);
        for img in &images(20) {
            for p in predict(img, &comp, &cfg, 10, 3, 1) {
                let s = p.samples.as_ref().unwrap();
                assert_eq!(s.len(), 10);
                assert_eq!(s.mean(), &p.detection);
                assert!(p.detection.bbox.within(300.0, 300.0));
            }
        }
    }
}
