//! Uncertainty scores, class weighting, image-level aggregation and query
//! selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{mean_detection, DatasetManifest, Detection, DropoutSampleSet, PredictedBox, TypeError};

/// Slack below zero tolerated for mutual information before it is clamped.
pub const MI_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("probability margin needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least 2 dropout samples, got {0}")]
    TooFewSamples(usize),
    #[error("pool-wide standardization needs at least 2 predictions, got {0}")]
    TooFewPredictions(usize),
    #[error("query size {requested} exceeds the {available} scored images")]
    QueryTooLarge { requested: usize, available: usize },
    #[error("strategy {strategy} needs dropout samples but image {image_id} has a prediction without them")]
    MissingSamples { strategy: Strategy, image_id: u64 },
    #[error("mutual information {0} is negative beyond numerical slack")]
    NegativeInformation(f64),
    #[error("non-finite score for image {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Type(#[from] TypeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Entropy,
    ProbMargin,
    McDropout,
    MutualInformation,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::ProbMargin,
        Strategy::McDropout,
        Strategy::MutualInformation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::ProbMargin => "prob_margin",
            Strategy::McDropout => "mc_dropout",
            Strategy::MutualInformation => "mutual_information",
        }
    }

    pub fn needs_samples(self) -> bool {
        matches!(self, Strategy::McDropout | Strategy::MutualInformation)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
                format!("unknown strategy {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Avg,
    Max,
}

/// Population used to z-standardize dropout feature deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    #[default]
    Pool,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryConfig {
    pub strategy: Strategy,
    pub aggregation: Aggregation,
    pub query_size: usize,
    pub dropout_samples: usize,
    pub class_weighting: bool,
    pub standardization: Standardization,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Entropy,
            aggregation: Aggregation::Sum,
            query_size: 100,
            dropout_samples: 10,
            class_weighting: true,
            standardization: Standardization::Pool,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.query_size < 1 {
            return Err("query_size must be at least 1".into());
        }
        if self.dropout_samples < 2 {
            return Err(format!(
                "dropout_samples must be at least 2, got {}",
                self.dropout_samples
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: u64,
    pub score: f64,
    pub count: usize,
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

pub fn entropy(det: &Detection) -> f64 {
    entropy_of(&det.class_probs)
}

/// `(1 − (p_max − p_second))²`.
pub fn prob_margin(det: &Detection) -> Result<f64, QueryError> {
    let p = &det.class_probs;
    if p.len() < 2 {
        return Err(QueryError::TooFewClasses(p.len()));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    let m = first - second;
    Ok((1.0 - 2.0 * m + m * m).clamp(0.0, 1.0))
}

pub fn mc_mean(samples: &[Detection]) -> Result<Detection, QueryError> {
    Ok(mean_detection(samples)?)
}

/// Entropy of the mean probabilities minus the mean sample entropy.
pub fn mutual_information(set: &DropoutSampleSet) -> Result<f64, QueryError> {
    let k = set.len();
    if k < 2 {
        return Err(QueryError::TooFewSamples(k));
    }
    let mean_h = set.samples().iter().map(entropy).sum::<f64>() / k as f64;
    let mi = entropy(set.mean()) - mean_h;
    if mi < -MI_SLACK {
        return Err(QueryError::NegativeInformation(mi));
    }
    Ok(mi.max(0.0))
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn feature_stds(set: &DropoutSampleSet) -> Result<Vec<f64>, QueryError> {
    if set.len() < 2 {
        return Err(QueryError::TooFewSamples(set.len()));
    }
    let feats: Vec<Vec<f64>> = set.samples().iter().map(|d| d.features()).collect();
    let dim = feats[0].len();
    Ok((0..dim)
        .map(|j| population_std(feats.iter().map(move |f| f[j])))
        .collect())
}

/// Maximum z-standardized per-feature dropout deviation for each prediction.
///
/// Deviations are standardized feature by feature across all given
/// predictions. Features that do not vary across the population contribute 0.
/// Scores are floored at 0.
pub fn dropout_std_scores(preds: &[&DropoutSampleSet]) -> Result<Vec<f64>, QueryError> {
    if preds.len() < 2 {
        return Err(QueryError::TooFewPredictions(preds.len()));
    }
    let stds = preds
        .iter()
        .map(|s| feature_stds(s))
        .collect::<Result<Vec<_>, _>>()?;
    let dim = stds[0].len();
    if let Some(bad) = stds.iter().find(|s| s.len() != dim) {
        return Err(TypeError::MisalignedSamples {
            expected: dim - 5,
            found: bad.len() - 5,
        }
        .into());
    }
    let mut z = vec![vec![0.0; dim]; stds.len()];
    for j in 0..dim {
        let col = stds.iter().map(|s| s[j]);
        let n = stds.len() as f64;
        let mean = col.clone().sum::<f64>() / n;
        let sd = population_std(col);
        if sd > 0.0 {
            for (zi, si) in z.iter_mut().zip(&stds) {
                zi[j] = (si[j] - mean) / sd;
            }
        }
    }
    Ok(z
        .into_iter()
        .map(|row| row.into_iter().fold(f64::NEG_INFINITY, f64::max).max(0.0))
        .collect())
}

/// Inverse-frequency weights `N / (C · max(n_c, 1))` over the labeled
/// instances. All ones when the labeled images carry no instances.
pub fn class_weights<'a, I>(manifest: &DatasetManifest, labeled: I) -> Result<Vec<f64>, TypeError>
where
    I: IntoIterator<Item = &'a u64>,
{
    let c = manifest.num_classes();
    let mut counts = vec![0usize; c];
    for id in labeled {
        let img = manifest.image(*id).ok_or(TypeError::UnknownImage(*id))?;
        for a in &img.annotations {
            counts[a.category_id] += 1;
        }
    }
    Ok(weights_from_counts(&counts))
}

pub fn weights_from_counts(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![1.0; counts.len()];
    }
    let c = counts.len() as f64;
    counts
        .iter()
        .map(|&n| total as f64 / (c * n.max(1) as f64))
        .collect()
}

pub fn aggregate(scores: &[f64], mode: Aggregation) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    match mode {
        Aggregation::Sum => scores.iter().sum(),
        Aggregation::Avg => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Per-prediction uncertainty for the sample-free strategies.
fn prediction_score(strategy: Strategy, pred: &PredictedBox) -> Result<f64, QueryError> {
    match strategy {
        Strategy::Entropy => Ok(entropy(&pred.detection)),
        Strategy::ProbMargin => prob_margin(&pred.detection),
        Strategy::MutualInformation => match &pred.samples {
            Some(s) => mutual_information(s),
            None => Err(QueryError::TooFewSamples(0)),
        },
        Strategy::Random | Strategy::McDropout => unreachable!("scored elsewhere"),
    }
}

/// Scores every pool image. `preds` holds the post-processed predictions
/// per image; `weights` are applied through each prediction's argmax class.
pub fn score_pool<R: Rng + ?Sized>(
    preds: &BTreeMap<u64, Vec<PredictedBox>>,
    config: &QueryConfig,
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<ImageScore>, QueryError> {
    let strategy = config.strategy;
    if strategy == Strategy::Random {
        return Ok(preds
            .iter()
            .map(|(&image_id, p)| ImageScore {
                image_id,
                score: rng.random::<f64>(),
                count: p.len(),
            })
            .collect());
    }
    if strategy.needs_samples() {
        for (&image_id, p) in preds {
            if p.iter().any(|b| b.samples.is_none()) {
                return Err(QueryError::MissingSamples { strategy, image_id });
            }
        }
    }

    let raw: BTreeMap<u64, Vec<f64>> = if strategy == Strategy::McDropout {
        dropout_scores(preds, config.standardization)?
    } else {
        preds
            .iter()
            .map(|(&id, p)| {
                let s = p
                    .iter()
                    .map(|b| prediction_score(strategy, b))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((id, s))
            })
            .collect::<Result<_, QueryError>>()?
    };

    preds
        .iter()
        .map(|(&image_id, p)| {
            let mut s = raw[&image_id].clone();
            if let Some(w) = weights {
                for (v, b) in s.iter_mut().zip(p) {
                    *v *= w[b.detection.predicted_class()];
                }
            }
            let score = aggregate(&s, config.aggregation);
            if !score.is_finite() {
                return Err(QueryError::NonFinite(image_id));
            }
            Ok(ImageScore {
                image_id,
                score,
                count: p.len(),
            })
        })
        .collect()
}

fn dropout_scores(
    preds: &BTreeMap<u64, Vec<PredictedBox>>,
    mode: Standardization,
) -> Result<BTreeMap<u64, Vec<f64>>, QueryError> {
    fn sets(p: &[PredictedBox]) -> Vec<&DropoutSampleSet> {
        p.iter().filter_map(|b| b.samples.as_ref()).collect()
    }
    // Too few predictions to standardize means no feature varies: score 0.
    let guarded = |s: &[&DropoutSampleSet]| -> Result<Vec<f64>, QueryError> {
        if s.len() < 2 {
            Ok(vec![0.0; s.len()])
        } else {
            dropout_std_scores(s)
        }
    };
    match mode {
        Standardization::Image => preds
            .iter()
            .map(|(&id, p)| Ok((id, guarded(&sets(p))?)))
            .collect(),
        Standardization::Pool => {
            let all: Vec<&DropoutSampleSet> = preds.values().flat_map(|p| sets(p)).collect();
            let mut flat = guarded(&all)?.into_iter();
            Ok(preds
                .iter()
                .map(|(&id, p)| (id, flat.by_ref().take(p.len()).collect()))
                .collect())
        }
    }
}

/// Top-`q` images by score. Ties are resolved by a seeded shuffle applied
/// before a stable descending sort.
pub fn select_query<R: Rng + ?Sized>(
    scores: &[ImageScore],
    q: usize,
    rng: &mut R,
) -> Result<Vec<u64>, QueryError> {
    if q > scores.len() {
        return Err(QueryError::QueryTooLarge {
            requested: q,
            available: scores.len(),
        });
    }
    let mut order: Vec<&ImageScore> = scores.iter().collect();
    order.shuffle(rng);
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(order.into_iter().take(q).map(|s| s.image_id).collect())
}
