//! Score thresholding and greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::types::{BoundingBox, Detection, PredictedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocConfig {
    /// Detections with objectness below this are dropped (keep on `s ≥ ε_s`).
    pub score_threshold: f64,
    /// Suppress on IoU strictly greater than this.
    pub iou_threshold: f64,
    /// Run NMS separately per predicted class.
    pub class_aware: bool,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            iou_threshold: 0.5,
            class_aware: false,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(format!("score_threshold {} outside [0, 1]", self.score_threshold));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(format!("iou_threshold {} outside [0, 1]", self.iou_threshold));
        }
        Ok(())
    }

    /// Threshold, then NMS. Output sorted by score descending.
    pub fn apply(&self, preds: &[PredictedBox]) -> Vec<PredictedBox> {
        let dets: Vec<&Detection> = preds.iter().map(|p| &p.detection).collect();
        let kept = filter_score_indices(&dets, self.score_threshold);
        let survivors: Vec<&Detection> = kept.iter().map(|&i| dets[i]).collect();
        nms_indices(&survivors, self.iou_threshold, self.class_aware)
            .into_iter()
            .map(|i| preds[kept[i]].clone())
            .collect()
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn filter_score_indices(dets: &[&Detection], threshold: f64) -> Vec<usize> {
    (0..dets.len())
        .filter(|&i| dets[i].score >= threshold)
        .collect()
}

pub fn filter_score(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.score >= threshold)
        .cloned()
        .collect()
}

/// Indices of NMS survivors, in descending score order (stable on ties).
pub fn nms_indices(dets: &[&Detection], iou_threshold: f64, class_aware: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let classes: Vec<usize> = dets.iter().map(|d| d.predicted_class()).collect();
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if suppressed[j] || (class_aware && classes[i] != classes[j]) {
                continue;
            }
            if iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Greedy class-agnostic NMS.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let refs: Vec<&Detection> = dets.iter().collect();
    nms_indices(&refs, iou_threshold, false)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}
