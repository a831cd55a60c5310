//! Synthetic benchmark: drive generator with point-level truth, label
//! corruption and detection metrics.

mod corrupt;
mod eval;
mod generate;

pub use corrupt::{corrupt_labels, CorruptedLabels, Corruption, CorruptionEntry, CorruptionSpec};
pub use eval::{
    average_precision, band_threshold, evaluate, greedy_match, write_report, BandMetrics, EvalReport, FrameMetrics,
    IouHistogram, ThresholdMetrics, DEFAULT_THRESHOLDS, HISTOGRAM_BINS, RANGE_BANDS,
};
pub use generate::{
    generate_drive, generate_scene, ClassSpec, ClutterSpec, Drive, GeneratedScene, GeneratedSweep, GroundSpec,
    PointKind, PointTruth, SceneSpec, WorldObject,
};

use crate::aggregation::AggregationError;
use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark parameters: {}", .0.join(", "))]
    Spec(Vec<String>),
    #[error("{pred} prediction frames for {truth} truth frames")]
    FrameCount { pred: usize, truth: usize },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
