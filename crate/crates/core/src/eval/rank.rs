//! Rank correlations between strategy orderings.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::runlog::RunLog;

use super::curve::{auc_between, build_curve, crossing, ALCurve, Axis};
use super::EvalError;

/// Runlogs of one (dataset, detector) experiment keyed by strategy.
pub type Collection = BTreeMap<String, Vec<RunLog>>;

/// 1-based ranks of `values` in ascending order; ties share their mean rank.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of fractional ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewItems(a.len()));
    }
    let (ra, rb) = (fractional_ranks(a), fractional_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(EvalError::UndefinedCorrelation);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRanking {
    pub entries: Vec<(String, f64)>,
    pub direction: Direction,
}

impl MethodRanking {
    /// Values oriented so that larger is better.
    pub fn goodness(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|(_, v)| match self.direction {
                Direction::HigherIsBetter => *v,
                Direction::LowerIsBetter => -*v,
            })
            .collect()
    }

    /// Fractional ranks with 1 = best.
    pub fn ranks(&self) -> Vec<f64> {
        let neg: Vec<f64> = self.goodness().iter().map(|g| -g).collect();
        fractional_ranks(&neg)
    }

    pub fn strategies(&self) -> Vec<&str> {
        self.entries.iter().map(|(s, _)| s.as_str()).collect()
    }

    /// Amount of data needed to reach `level`; strategies that never cross
    /// rank last (infinite).
    pub fn by_crossing(curves: &BTreeMap<String, ALCurve>, level: f64) -> Self {
        Self {
            entries: curves
                .iter()
                .map(|(s, c)| (s.clone(), crossing(c, level).unwrap_or(f64::INFINITY)))
                .collect(),
            direction: Direction::LowerIsBetter,
        }
    }

    pub fn by_final_map(curves: &BTreeMap<String, ALCurve>) -> Self {
        Self {
            entries: curves
                .iter()
                .map(|(s, c)| (s.clone(), c.final_mean()))
                .collect(),
            direction: Direction::HigherIsBetter,
        }
    }

    /// Crossing ranking at `level`; falls back to final mAP when every
    /// strategy ties (e.g. none crosses).
    pub fn reference(curves: &BTreeMap<String, ALCurve>, level: f64) -> Self {
        let r = Self::by_crossing(curves, level);
        let g = r.goodness();
        if g.windows(2).all(|w| w[0] == w[1]) {
            Self::by_final_map(curves)
        } else {
            r
        }
    }
}

pub fn collection_curves(
    collection: &Collection,
    axis: Axis,
) -> Result<BTreeMap<String, ALCurve>, EvalError> {
    collection
        .iter()
        .map(|(s, logs)| {
            let refs: Vec<&RunLog> = logs.iter().collect();
            build_curve(&refs, axis)
                .map(|c| (s.clone(), c))
                .map_err(|e| EvalError::Strategy {
                    strategy: s.clone(),
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Interval on which every curve is defined.
pub fn common_domain(curves: &BTreeMap<String, ALCurve>) -> Result<(f64, f64), EvalError> {
    let lo = curves.values().map(|c| c.domain().0).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.values().map(|c| c.domain().1).fold(f64::INFINITY, f64::min);
    if lo >= hi {
        return Err(EvalError::EmptyOverlap { lo, hi });
    }
    Ok((lo, hi))
}

/// Area of each curve over the common domain, in strategy order.
pub fn final_aucs(curves: &BTreeMap<String, ALCurve>) -> Result<Vec<f64>, EvalError> {
    let (lo, hi) = common_domain(curves)?;
    curves.values().map(|c| auc_between(c, lo, hi)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Map50,
    Auc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Map50 => "map50",
            Metric::Auc => "auc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationHistory {
    pub metric: Metric,
    pub axis: Axis,
    /// `(x / x_max, ρ)`; ρ is `None` where the ranking is undefined.
    pub points: Vec<(f64, Option<f64>)>,
    pub min: Option<f64>,
    pub mean: Option<f64>,
}

/// Spearman ρ between the strategies' ranking by `metric` at each grid
/// point and the `reference` ranking.
///
/// For the cumulative AUC the domain start is skipped: every area is zero
/// there.
pub fn correlation_history(
    collection: &Collection,
    reference: &MethodRanking,
    metric: Metric,
    axis: Axis,
) -> Result<CorrelationHistory, EvalError> {
    if collection.len() < 2 {
        return Err(EvalError::TooFewItems(collection.len()));
    }
    let curves = collection_curves(collection, axis)?;
    let names: Vec<&str> = curves.keys().map(String::as_str).collect();
    let mut ref_sorted = reference.entries.clone();
    ref_sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if ref_sorted.iter().map(|e| e.0.as_str()).ne(names.iter().copied()) {
        return Err(EvalError::MismatchedStrategies);
    }
    let goodness = MethodRanking {
        entries: ref_sorted,
        direction: reference.direction,
    }
    .goodness();

    let (lo, hi) = common_domain(&curves)?;
    let mut grid: Vec<f64> = curves
        .values()
        .flat_map(|c| c.x.iter().copied())
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if metric == Metric::Auc {
        grid.retain(|&x| x > lo);
    }
    let x_max = collection
        .values()
        .flatten()
        .flat_map(|l| axis.points(l))
        .map(|p| p.0)
        .fold(0.0, f64::max);

    let mut points = Vec::with_capacity(grid.len());
    for &x in &grid {
        let values = curves
            .values()
            .map(|c| match metric {
                Metric::Map50 => c.value_at(x),
                Metric::Auc => auc_between(c, lo, x),
            })
            .collect::<Result<Vec<_>, _>>()?;
        points.push((x / x_max, spearman(&values, &goodness).ok()));
    }
    let defined: Vec<f64> = points.iter().filter_map(|p| p.1).collect();
    let min = defined.iter().copied().reduce(f64::min);
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(CorrelationHistory {
        metric,
        axis,
        points,
        min,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub rho: Vec<Vec<Option<f64>>>,
}

/// Pairwise Spearman ρ of the final-AUC strategy rankings of several
/// collections, which must all cover the same strategies.
pub fn cross_collection_matrix(
    collections: &BTreeMap<String, Collection>,
    axis: Axis,
) -> Result<CorrelationMatrix, EvalError> {
    let mut aucs = Vec::new();
    let mut strategies: Option<Vec<&String>> = None;
    for coll in collections.values() {
        let keys: Vec<&String> = coll.keys().collect();
        match &strategies {
            None => strategies = Some(keys),
            Some(s) if *s != keys => return Err(EvalError::MismatchedStrategies),
            Some(_) => {}
        }
        aucs.push(final_aucs(&collection_curves(coll, axis)?)?);
    }
    let n = aucs.len();
    let rho = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Some(1.0)
                    } else {
                        spearman(&aucs[i], &aucs[j]).ok()
                    }
                })
                .collect()
        })
        .collect();
    Ok(CorrelationMatrix {
        labels: collections.keys().cloned().collect(),
        rho,
    })
}
