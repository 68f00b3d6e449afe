//! Shared domain types: boxes, detections, annotations, datasets and pool state.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|Σ p_c − 1|` for class-probability vectors.
pub const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): need finite corners with min < max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("objectness {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("class probabilities sum to {sum}, deviating from 1 by more than {PROB_TOLERANCE}")]
    Unnormalized { sum: f64 },
    #[error("negative or non-finite class probability {0}")]
    InvalidProbability(f64),
    #[error("empty class-probability vector")]
    NoClasses,
    #[error("dropout sample set is empty")]
    EmptySamples,
    #[error("dropout samples disagree on class count: {expected} vs {found}")]
    MisalignedSamples { expected: usize, found: usize },
    #[error("unknown image id {0}")]
    UnknownImage(u64),
    #[error("duplicate image id {0} in manifest")]
    DuplicateImage(u64),
    #[error("image {image_id}: category {category_id} out of range for {num_classes} classes")]
    CategoryOutOfRange {
        image_id: u64,
        category_id: usize,
        num_classes: usize,
    },
    #[error("image {0}: width and height must be positive")]
    EmptyImage(u64),
    #[error("image {image_id}: annotation box exceeds image bounds")]
    AnnotationOutOfBounds { image_id: u64 },
    #[error("image {0} is not in the unlabeled pool")]
    NotUnlabeled(u64),
    #[error("image {0} queried twice in one step")]
    DuplicateQuery(u64),
}

/// Axis-aligned box in corner format, pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, TypeError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(TypeError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    /// Builds a box from COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, TypeError> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Clips to `[0, width] × [0, height]`; `None` when nothing of positive area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let b = Self {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        };
        b.is_valid().then_some(b)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = TypeError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

/// One predicted box with objectness and a class-probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub class_probs: Vec<f64>,
}

impl Detection {
    /// Validates the score and probabilities. Vectors within [`PROB_TOLERANCE`]
    /// of unit sum are renormalized; larger deviations are rejected.
    pub fn new(bbox: BoundingBox, score: f64, class_probs: Vec<f64>) -> Result<Self, TypeError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(TypeError::InvalidScore(score));
        }
        let class_probs = normalize_probs(class_probs)?;
        Ok(Self {
            bbox,
            score,
            class_probs,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_probs.len()
    }

    /// Index of the most probable class; ties go to the lowest index.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.class_probs)
    }

    /// Flat feature vector `(x_min, y_min, x_max, y_max, s, p_1..p_C)`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(5 + self.class_probs.len());
        f.extend_from_slice(&self.bbox.as_array());
        f.push(self.score);
        f.extend_from_slice(&self.class_probs);
        f
    }

    /// Inverse of [`Detection::features`].
    pub fn from_features(features: &[f64]) -> Result<Self, TypeError> {
        if features.len() < 6 {
            return Err(TypeError::NoClasses);
        }
        let bbox = BoundingBox::new(features[0], features[1], features[2], features[3])?;
        Self::new(bbox, features[4], features[5..].to_vec())
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn normalize_probs(mut probs: Vec<f64>) -> Result<Vec<f64>, TypeError> {
    if probs.is_empty() {
        return Err(TypeError::NoClasses);
    }
    if let Some(&bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(TypeError::InvalidProbability(bad));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(TypeError::Unnormalized { sum });
    }
    // Summation rounding alone is not worth rescaling for.
    if (sum - 1.0).abs() > f64::EPSILON * probs.len() as f64 {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(probs)
}

/// Component-wise arithmetic mean of aligned detections.
pub fn mean_detection(samples: &[Detection]) -> Result<Detection, TypeError> {
    let first = samples.first().ok_or(TypeError::EmptySamples)?;
    let dim = first.num_classes();
    let mut acc = vec![0.0; 5 + dim];
    for s in samples {
        if s.num_classes() != dim {
            return Err(TypeError::MisalignedSamples {
                expected: dim,
                found: s.num_classes(),
            });
        }
        for (a, f) in acc.iter_mut().zip(s.features()) {
            *a += f;
        }
    }
    let k = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Detection::from_features(&acc)
}

/// K Monte-Carlo dropout outputs of the same anchor together with their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSampleSet {
    mean: Detection,
    samples: Vec<Detection>,
}

impl DropoutSampleSet {
    pub fn from_samples(samples: Vec<Detection>) -> Result<Self, TypeError> {
        let mean = mean_detection(&samples)?;
        Ok(Self { mean, samples })
    }

    pub fn mean(&self) -> &Detection {
        &self.mean
    }

    pub fn samples(&self) -> &[Detection] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A backend prediction: the (mean) detection plus optional dropout samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedBox {
    pub detection: Detection,
    pub samples: Option<DropoutSampleSet>,
}

impl PredictedBox {
    pub fn plain(detection: Detection) -> Self {
        Self {
            detection,
            samples: None,
        }
    }

    pub fn with_samples(samples: DropoutSampleSet) -> Self {
        Self {
            detection: samples.mean().clone(),
            samples: Some(samples),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BoundingBox,
    pub category_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    /// Path relative to the dataset root.
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
}

/// Named dataset with ordered categories and disjoint splits.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    name: String,
    categories: Vec<String>,
    splits: BTreeMap<String, Vec<ImageRecord>>,
    index: HashMap<u64, (String, usize)>,
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        categories: Vec<String>,
        splits: BTreeMap<String, Vec<ImageRecord>>,
    ) -> Result<Self, TypeError> {
        let num_classes = categories.len();
        let mut index = HashMap::new();
        for (split, images) in &splits {
            for (pos, img) in images.iter().enumerate() {
                if img.width == 0 || img.height == 0 {
                    return Err(TypeError::EmptyImage(img.image_id));
                }
                for ann in &img.annotations {
                    if ann.category_id >= num_classes {
                        return Err(TypeError::CategoryOutOfRange {
                            image_id: img.image_id,
                            category_id: ann.category_id,
                            num_classes,
                        });
                    }
                    if !ann.bbox.within(img.width as f64, img.height as f64) {
                        return Err(TypeError::AnnotationOutOfBounds {
                            image_id: img.image_id,
                        });
                    }
                }
                if index
                    .insert(img.image_id, (split.clone(), pos))
                    .is_some()
                {
                    return Err(TypeError::DuplicateImage(img.image_id));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            categories,
            splits,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn splits(&self) -> &BTreeMap<String, Vec<ImageRecord>> {
        &self.splits
    }

    /// Images of a split, empty when the split does not exist.
    pub fn split(&self, name: &str) -> &[ImageRecord] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        let (split, pos) = self.index.get(&id)?;
        self.splits.get(split).map(|imgs| &imgs[*pos])
    }

    pub fn split_of(&self, id: u64) -> Option<&str> {
        self.index.get(&id).map(|(s, _)| s.as_str())
    }

    /// Total annotation count over `ids`.
    pub fn count_instances<'a, I>(&self, ids: I) -> Result<usize, TypeError>
    where
        I: IntoIterator<Item = &'a u64>,
    {
        ids.into_iter().try_fold(0, |acc, id| {
            self.image(*id)
                .map(|img| acc + img.annotations.len())
                .ok_or(TypeError::UnknownImage(*id))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub step: usize,
    pub ids: Vec<u64>,
}

/// Labeled set `L`, unlabeled pool `U` and the query history.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    labeled: BTreeSet<u64>,
    unlabeled: BTreeSet<u64>,
    history: Vec<QueryRecord>,
}

impl PoolState {
    /// `labeled` wins on overlap.
    pub fn new(labeled: BTreeSet<u64>, unlabeled: BTreeSet<u64>) -> Self {
        let unlabeled = unlabeled.difference(&labeled).copied().collect();
        Self {
            labeled,
            unlabeled,
            history: Vec::new(),
        }
    }

    pub fn labeled(&self) -> &BTreeSet<u64> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<u64> {
        &self.unlabeled
    }

    pub fn history(&self) -> &[QueryRecord] {
        &self.history
    }

    /// Moves `ids` from `U` to `L`. Atomic: on error nothing changes.
    pub fn apply_query(&mut self, step: usize, ids: &[u64]) -> Result<(), TypeError> {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !self.unlabeled.contains(id) {
                return Err(TypeError::NotUnlabeled(*id));
            }
            if !seen.insert(*id) {
                return Err(TypeError::DuplicateQuery(*id));
            }
        }
        for id in ids {
            self.unlabeled.remove(id);
            self.labeled.insert(*id);
        }
        self.history.push(QueryRecord {
            step,
            ids: ids.to_vec(),
        });
        Ok(())
    }
}
