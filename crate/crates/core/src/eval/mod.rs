//! mAP, AL curves, AUC, crossings, rank correlations and reports.

mod curve;
mod map;
mod rank;
mod report;
mod svg;

use thiserror::Error;

pub use curve::{auc, auc_between, build_curve, build_curve_on, crossing, interp, overlap_grid, ALCurve, Axis};
pub use map::{average_precision, map50, map_at, match_detections, Matches};
pub use rank::{
    collection_curves, common_domain, correlation_history, cross_collection_matrix, final_aucs,
    fractional_ranks, spearman, Collection, CorrelationHistory, CorrelationMatrix, Direction,
    MethodRanking, Metric,
};
pub use report::{
    group_runlogs, report, AxisRow, ExperimentKey, ExperimentReport, MaxPerformanceTable, Report,
    ReportOptions,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions reference image {0}, which is not in the evaluated split")]
    UnknownImage(u64),
    #[error("image {image_id}: detection has {found} class probabilities, expected {expected}")]
    ClassCount {
        image_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("evaluated split has no ground-truth instances")]
    NoGroundTruth,
    #[error("empty curve")]
    EmptyCurve,
    #[error("seed {seed}: curve x-values are not strictly increasing")]
    NotIncreasing { seed: u64 },
    #[error("curves do not overlap: [{lo}, {hi}] is empty")]
    EmptyOverlap { lo: f64, hi: f64 },
    #[error("x = {x} outside curve domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items to rank, got {0}")]
    TooFewItems(usize),
    #[error("rank correlation undefined: constant ranking")]
    UndefinedCorrelation,
    #[error("collections do not cover the same strategies")]
    MismatchedStrategies,
    #[error("strategy {strategy}: {source}")]
    Strategy {
        strategy: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("no runlogs found")]
    NoRunlogs,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("max-performance table {path}: {message}")]
    MaxPerformance { path: String, message: String },
}
