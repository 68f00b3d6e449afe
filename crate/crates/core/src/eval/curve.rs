//! Seed-averaged AL curves, their area and threshold crossings.

use serde::{Deserialize, Serialize};

use crate::runlog::RunLog;

use super::EvalError;

/// X-axis of an AL curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Images,
    Instances,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::Images, Axis::Instances];

    /// Label used in report file names.
    pub fn file_label(self) -> &'static str {
        match self {
            Axis::Images => "images",
            Axis::Instances => "boxes",
        }
    }

    pub fn points(self, log: &RunLog) -> Vec<(f64, f64)> {
        log.steps
            .iter()
            .map(|s| {
                let x = match self {
                    Axis::Images => s.images_labeled,
                    Axis::Instances => s.instances_labeled,
                };
                (x as f64, s.map50)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ALCurve {
    pub axis: Axis,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seeds: usize,
}

/// Linear interpolation of a polyline at `x`, which must lie in its domain.
pub fn interp(points: &[(f64, f64)], x: f64) -> f64 {
    let k = points.partition_point(|p| p.0 < x);
    if k == 0 {
        return points[0].1;
    }
    if k == points.len() {
        return points[k - 1].1;
    }
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    if x == x1 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn check_increasing(points: &[(f64, f64)], seed: u64) -> Result<(), EvalError> {
    if points.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(EvalError::NotIncreasing { seed });
    }
    Ok(())
}

/// Default grid: union of all seeds' x-values inside the overlap interval.
pub fn overlap_grid(curves: &[Vec<(f64, f64)>]) -> Result<Vec<f64>, EvalError> {
    let lo = curves
        .iter()
        .map(|c| c[0].0)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = curves
        .iter()
        .map(|c| c[c.len() - 1].0)
        .fold(f64::INFINITY, f64::min);
    if lo > hi {
        return Err(EvalError::EmptyOverlap { lo, hi });
    }
    let mut grid: Vec<f64> = curves
        .iter()
        .flatten()
        .map(|p| p.0)
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

pub fn build_curve(logs: &[&RunLog], axis: Axis) -> Result<ALCurve, EvalError> {
    build_curve_on(logs, axis, None)
}

/// Interpolates every seed onto `grid` (or the overlap grid) and takes the
/// point-wise mean and population std.
pub fn build_curve_on(
    logs: &[&RunLog],
    axis: Axis,
    grid: Option<&[f64]>,
) -> Result<ALCurve, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    let curves: Vec<Vec<(f64, f64)>> = logs.iter().map(|l| axis.points(l)).collect();
    for (c, l) in curves.iter().zip(logs) {
        check_increasing(c, l.seed)?;
    }
    let x = match grid {
        Some(g) => {
            let own = overlap_grid(&curves)?;
            let (lo, hi) = (own[0], own[own.len() - 1]);
            if let Some(&bad) = g.iter().find(|&&v| v < lo || v > hi) {
                return Err(EvalError::OutsideDomain { x: bad, lo, hi });
            }
            g.to_vec()
        }
        None => overlap_grid(&curves)?,
    };
    let n = curves.len() as f64;
    let mut mean = Vec::with_capacity(x.len());
    let mut std = Vec::with_capacity(x.len());
    for &xi in &x {
        let ys: Vec<f64> = curves.iter().map(|c| interp(c, xi)).collect();
        let m = ys.iter().sum::<f64>() / n;
        let v = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(v.sqrt());
    }
    Ok(ALCurve {
        axis,
        x,
        mean,
        std,
        seeds: logs.len(),
    })
}

impl ALCurve {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.x.iter().copied().zip(self.mean.iter().copied()).collect()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn value_at(&self, x: f64) -> Result<f64, EvalError> {
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return Err(EvalError::OutsideDomain { x, lo, hi });
        }
        Ok(interp(&self.points(), x))
    }

    pub fn final_mean(&self) -> f64 {
        self.mean[self.mean.len() - 1]
    }

    pub fn final_std(&self) -> f64 {
        self.std[self.std.len() - 1]
    }
}

/// Trapezoidal area under the mean curve from its first grid point to `x`.
pub fn auc(curve: &ALCurve, x: f64) -> Result<f64, EvalError> {
    auc_between(curve, curve.x[0], x)
}

/// Trapezoidal area under the mean curve over `[a, b]`.
pub fn auc_between(curve: &ALCurve, a: f64, b: f64) -> Result<f64, EvalError> {
    let (lo, hi) = curve.domain();
    for v in [a, b] {
        if !(lo..=hi).contains(&v) {
            return Err(EvalError::OutsideDomain { x: v, lo, hi });
        }
    }
    if b < a {
        return Err(EvalError::OutsideDomain { x: b, lo: a, hi });
    }
    let pts = curve.points();
    let mut knots = vec![(a, interp(&pts, a))];
    knots.extend(pts.iter().copied().filter(|p| p.0 > a && p.0 < b));
    knots.push((b, interp(&pts, b)));
    Ok(knots
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum())
}

/// First x at which the piecewise-linear mean curve reaches `level`.
pub fn crossing(curve: &ALCurve, level: f64) -> Option<f64> {
    let pts = curve.points();
    if pts[0].1 >= level {
        return Some(pts[0].0);
    }
    pts.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        (y1 >= level).then(|| {
            if y1 == y0 {
                x1
            } else {
                (x0 + (level - y0) * (x1 - x0) / (y1 - y0)).min(x1)
            }
        })
    })
}
