//! Active-learning sandbox for object detection.
//!
//! Generates semi-synthetic detection datasets, runs pool-based active
//! learning against pluggable detector backends (including a built-in
//! statistical simulator) and evaluates the resulting learning curves.

pub mod coco;
pub mod config;
pub mod eval;
pub mod orchestrator;
pub mod postproc;
pub mod query;
pub mod rng;
pub mod runlog;
pub mod simbackend;
pub mod synthgen;
pub mod types;

pub use types::{
    Annotation, BoundingBox, DatasetManifest, Detection, DropoutSampleSet, ImageRecord, PoolState,
    PredictedBox, QueryRecord,
};
