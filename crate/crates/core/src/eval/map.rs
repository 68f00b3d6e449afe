//! Detection matching and mAP at a fixed IoU threshold.

use std::collections::BTreeMap;

use crate::postproc::iou;
use crate::types::{Annotation, Detection, ImageRecord};

use super::EvalError;

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Matches {
    /// `(class, score, is_tp)` in descending score order, stable on ties.
    pub detections: Vec<(usize, f64, bool)>,
    pub gt_counts: Vec<usize>,
}

/// Greedy per-class matching: in score order, each detection takes the
/// unmatched ground-truth box of its predicted class with the highest IoU at
/// or above `iou_threshold`.
pub fn match_detections(
    preds: &[Detection],
    gts: &[Annotation],
    num_classes: usize,
    iou_threshold: f64,
) -> Matches {
    let mut gt_counts = vec![0; num_classes];
    for g in gts {
        gt_counts[g.category_id] += 1;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut taken = vec![false; gts.len()];
    let detections = order
        .into_iter()
        .map(|i| {
            let d = &preds[i];
            let class = d.predicted_class();
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.category_id != class {
                    continue;
                }
                let o = iou(&d.bbox, &g.bbox);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (class, d.score, best.is_some())
        })
        .collect();
    Matches {
        detections,
        gt_counts,
    }
}

/// All-point interpolated AP from ranked TP flags.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked_tp.len());
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// mAP over the classes that have at least one ground-truth instance in
/// `images`. Predictions are keyed by image id; images without an entry
/// have no detections. Ranking ties across images follow image order.
pub fn map_at(
    preds: &BTreeMap<u64, Vec<Detection>>,
    images: &[ImageRecord],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<f64, EvalError> {
    let index: BTreeMap<u64, &ImageRecord> = images.iter().map(|r| (r.image_id, r)).collect();
    if let Some(id) = preds.keys().find(|id| !index.contains_key(id)) {
        return Err(EvalError::UnknownImage(*id));
    }
    let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); num_classes];
    let mut gt_counts = vec![0usize; num_classes];
    for (id, img) in &index {
        let dets = preds.get(id).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(d) = dets.iter().find(|d| d.num_classes() != num_classes) {
            return Err(EvalError::ClassCount {
                image_id: *id,
                expected: num_classes,
                found: d.num_classes(),
            });
        }
        let m = match_detections(dets, &img.annotations, num_classes, iou_threshold);
        for (c, n) in m.gt_counts.iter().enumerate() {
            gt_counts[c] += n;
        }
        for (c, s, tp) in m.detections {
            per_class[c].push((s, tp));
        }
    }
    if gt_counts.iter().all(|&n| n == 0) {
        return Err(EvalError::NoGroundTruth);
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for (c, dets) in per_class.iter_mut().enumerate() {
        if gt_counts[c] == 0 {
            continue;
        }
        dets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ranked: Vec<bool> = dets.iter().map(|d| d.1).collect();
        sum += average_precision(&ranked, gt_counts[c]);
        classes += 1;
    }
    Ok(sum / classes as f64)
}

pub fn map50(
    preds: &BTreeMap<u64, Vec<Detection>>,
    images: &[ImageRecord],
    num_classes: usize,
) -> Result<f64, EvalError> {
    map_at(preds, images, num_classes, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BoundingBox;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn onehot(c: usize, n: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        p[c] = 1.0;
        p
    }

    fn det(b: BoundingBox, s: f64, c: usize, n: usize) -> Detection {
        Detection::new(b, s, onehot(c, n)).unwrap()
    }

    fn gt(b: BoundingBox, c: usize) -> Annotation {
        Annotation {
            bbox: b,
            category_id: c,
        }
    }

    fn image(id: u64, anns: Vec<Annotation>) -> ImageRecord {
        ImageRecord {
            image_id: id,
            file_name: format!("{id}.png"),
            width: 100,
            height: 100,
            annotations: anns,
        }
    }

    #[test]
    fn matching_examples() {
        let g = [gt(bx(0.0, 0.0, 10.0, 10.0), 0)];
        let m = match_detections(&[det(bx(0.0, 0.0, 10.0, 10.0), 0.9, 0, 1)], &g, 1, 0.5);
        assert_eq!(m.detections, vec![(0, 0.9, true)]);

        let m = match_detections(
            &[
                det(bx(0.0, 0.0, 10.0, 10.0), 0.6, 0, 1),
                det(bx(0.0, 0.0, 10.0, 10.0), 0.8, 0, 1),
            ],
            &g,
            1,
            0.5,
        );
        assert_eq!(m.detections, vec![(0, 0.8, true), (0, 0.6, false)]);

        // IoU 0.4: intersection 40, union 100.
        let d = det(bx(0.0, 0.0, 4.0, 10.0), 0.9, 0, 1);
        assert!((iou(&d.bbox, &g[0].bbox) - 0.4).abs() < 1e-12);
        let m = match_detections(&[d], &g, 1, 0.5);
        assert_eq!(m.detections, vec![(0, 0.9, false)]);
    }

    #[test]
    fn wrong_class_is_fp() {
        let g = [gt(bx(0.0, 0.0, 10.0, 10.0), 0)];
        let m = match_detections(&[det(bx(0.0, 0.0, 10.0, 10.0), 0.9, 1, 2)], &g, 2, 0.5);
        assert_eq!(m.detections, vec![(1, 0.9, false)]);
        assert_eq!(m.gt_counts, vec![1, 0]);
    }

    #[test]
    fn map_examples() {
        let imgs = vec![
            image(1, vec![gt(bx(0.0, 0.0, 10.0, 10.0), 0), gt(bx(50.0, 50.0, 70.0, 70.0), 1)]),
            image(2, vec![gt(bx(20.0, 20.0, 40.0, 45.0), 1)]),
        ];
        let perfect: BTreeMap<u64, Vec<Detection>> = imgs
            .iter()
            .map(|r| {
                let d = r
                    .annotations
                    .iter()
                    .map(|a| det(a.bbox, 1.0, a.category_id, 2))
                    .collect();
                (r.image_id, d)
            })
            .collect();
        assert_eq!(map50(&perfect, &imgs, 2).unwrap(), 1.0);
        assert_eq!(map50(&BTreeMap::new(), &imgs, 2).unwrap(), 0.0);
        assert!(matches!(
            map50(&BTreeMap::new(), &[image(1, vec![])], 2),
            Err(EvalError::NoGroundTruth)
        ));
    }

    #[test]
    fn hand_pr_curve() {
        // TP 0.9, FP 0.8, TP 0.7 against 2 GT: 0.5·1 + 0.5·(2/3).
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);

        let imgs = vec![image(
            1,
            vec![gt(bx(0.0, 0.0, 10.0, 10.0), 0), gt(bx(30.0, 30.0, 40.0, 40.0), 0)],
        )];
        let preds = BTreeMap::from([(
            1,
            vec![
                det(bx(0.0, 0.0, 10.0, 10.0), 0.9, 0, 1),
                det(bx(60.0, 60.0, 70.0, 70.0), 0.8, 0, 1),
                det(bx(30.0, 30.0, 40.0, 40.0), 0.7, 0, 1),
            ],
        )]);
        assert!((map50(&preds, &imgs, 1).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn classes_without_gt_are_excluded() {
        let imgs = vec![image(1, vec![gt(bx(0.0, 0.0, 10.0, 10.0), 0)])];
        let preds = BTreeMap::from([(
            1,
            vec![
                det(bx(0.0, 0.0, 10.0, 10.0), 0.9, 0, 3),
                det(bx(50.0, 50.0, 60.0, 60.0), 0.9, 2, 3),
            ],
        )]);
        assert_eq!(map50(&preds, &imgs, 3).unwrap(), 1.0);
    }

    /// Reference: enumerate the ranked list; every TP at rank k adds
    /// `1/nGT` times the best precision at any rank ≥ k.
    fn brute_force_map(
        preds: &BTreeMap<u64, Vec<Detection>>,
        images: &[ImageRecord],
        c: usize,
    ) -> Option<f64> {
        let mut total = 0.0;
        let mut classes = 0;
        for class in 0..c {
            let n_gt: usize = images
                .iter()
                .map(|r| r.annotations.iter().filter(|a| a.category_id == class).count())
                .sum();
            if n_gt == 0 {
                continue;
            }
            let mut ranked: Vec<(f64, bool)> = Vec::new();
            for r in images {
                let dets = preds.get(&r.image_id).cloned().unwrap_or_default();
                // Recompute matching from scratch for this class only.
                let mut idx: Vec<usize> = (0..dets.len()).collect();
                idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
                let mut used = vec![false; r.annotations.len()];
                for i in idx {
                    let d = &dets[i];
                    if d.predicted_class() != class {
                        continue;
                    }
                    let mut best = None;
                    let mut best_iou = -1.0;
                    for (j, a) in r.annotations.iter().enumerate() {
                        if used[j] || a.category_id != class {
                            continue;
                        }
                        let o = iou(&d.bbox, &a.bbox);
                        if o >= 0.5 && o > best_iou {
                            best_iou = o;
                            best = Some(j);
                        }
                    }
                    if let Some(j) = best {
                        used[j] = true;
                    }
                    ranked.push((d.score, best.is_some()));
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let prec: Vec<f64> = (0..ranked.len())
                .map(|k| ranked[..=k].iter().filter(|x| x.1).count() as f64 / (k + 1) as f64)
                .collect();
            let mut ap = 0.0;
            for k in 0..ranked.len() {
                if ranked[k].1 {
                    let best = prec[k..].iter().cloned().fold(0.0, f64::max);
                    ap += best / n_gt as f64;
                }
            }
            total += ap;
            classes += 1;
        }
        (classes > 0).then(|| total / classes as f64)
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u8..8, 0u8..8, 2u8..6, 2u8..6).prop_map(|(x, y, w, h)| {
            let (x, y) = (x as f64 * 2.0, y as f64 * 2.0);
            bx(x, y, x + w as f64 * 2.0, y + h as f64 * 2.0)
        })
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<ImageRecord>, BTreeMap<u64, Vec<Detection>>, usize)>
    {
        (1usize..=3).prop_flat_map(|c| {
            let img = (
                proptest::collection::vec((arb_box(), 0..c), 0..=8),
                proptest::collection::vec((arb_box(), 0u8..=4, 0..c), 0..=8),
            );
            proptest::collection::vec(img, 1..=5).prop_map(move |v| {
                let mut images = Vec::new();
                let mut preds = BTreeMap::new();
                for (i, (g, d)) in v.into_iter().enumerate() {
                    let id = i as u64 * 3 + 1;
                    images.push(image(id, g.into_iter().map(|(b, k)| gt(b, k)).collect()));
                    preds.insert(
                        id,
                        d.into_iter()
                            .map(|(b, s, k)| det(b, s as f64 / 4.0, k, c))
                            .collect(),
                    );
                }
                (images, preds, c)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn map_matches_brute_force((images, preds, c) in arb_instance()) {
            match brute_force_map(&preds, &images, c) {
                Some(expected) => {
                    let got = map50(&preds, &images, c).unwrap();
                    prop_assert!((got - expected).abs() <= 1e-9, "{} vs {}", got, expected);
                    prop_assert!((0.0..=1.0).contains(&got));
                }
                None => prop_assert!(matches!(map50(&preds, &images, c), Err(EvalError::NoGroundTruth))),
            }
        }
    }
}
