//! Stage runners shared by the command line and the end-to-end run:
//! frame preparation, initial labels, warm-up, cue refinement,
//! self-training and evaluation, with their on-disk artifacts.

mod config;
mod stages;

pub use config::{ConfigError, DetectorKind, DetectorSection, EvalSection, MotionParams, PipelineConfig};
pub use stages::{
    align_labels, evaluate_labels, frame_labels, load_scenes, read_frame_labels, run_cues, write_cues, write_json, write_round, StageMetrics, make_reasoner, mar_score, prepare_frame, prepare_frames, refinement_benchmark,
    run_e2e, run_labels, run_refine, run_selftrain, run_warmup, write_branches_csv, write_config, BenchmarkOutcome,
    E2eSummary, MarScore, PreparedFrame, ReasonerKind, RoundSummary,
};

use crate::aggregation::AggregationError;
use crate::bench::BenchError;
use crate::clustering::ClusteringError;
use crate::cues::CueError;
use crate::ground::GroundError;
use crate::io::IoError;
use crate::occupancy::OccupancyError;
use crate::reasoner::ReasonerError;
use crate::selftrain::SelfTrainError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("input not found: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Cue(#[from] CueError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    SelfTrain(#[from] SelfTrainError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{0}")]
    Format(String),
}

impl PipelineError {
    /// Process exit status: 2 for missing inputs, 3 for invalid
    /// configuration, 4 for a remote reasoner without an endpoint, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput(_) => 2,
            PipelineError::Config(_) => 3,
            PipelineError::Reasoner(ReasonerError::Unconfigured)
            | PipelineError::SelfTrain(SelfTrainError::Reasoner(ReasonerError::Unconfigured)) => 4,
            _ => 1,
        }
    }

    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::File { path: path.display().to_string(), source }
    }
}
