//! Occupancy-guided warm-up: distance-dependent voxel masking, occupancy
//! targets, a small occupancy predictor and its BCE training loop.

mod dataset;
mod io;
mod loss;
mod mask;
mod predictor;
mod train;

pub use dataset::{build_targets, voxel_features, OccupancyTargets, DISTANCE_NORM, FEATURE_LEN};
pub use io::{decode_warmup, encode_warmup, export_warmup, import_warmup, MAGIC, VERSION};
pub use loss::{occupancy_loss, LossWithGrad, LOSS_CLAMP};
pub use mask::{mask_ratio, sample_mask, voxel_center_distance, voxel_centroid, MaskSchedule, VoxelMask};
pub use predictor::OccupancyPredictor;
pub use train::{balanced_accuracy, prepare_samples, train_warmup, SceneSamples, WarmupConfig, WarmupOutcome};

use crate::geometry::{GeometryError, VoxelIndex};

#[derive(Debug, thiserror::Error)]
pub enum OccupancyError {
    #[error("voxel {0:?} is empty")]
    EmptyVoxel(VoxelIndex),
    #[error("prediction domain is empty")]
    EmptyDomain,
    #[error("prediction {value} at index {index} is outside (0, 1)")]
    PredictionOutOfRange { index: usize, value: f64 },
    #[error("invalid warm-up parameter: {0}")]
    Param(String),
    #[error("training diverged at epoch {epoch} (last finite loss {last})")]
    Diverged { epoch: usize, last: f64 },
    #[error("warm-up file truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("not a warm-up parameter file (bad magic)")]
    BadMagic,
    #[error("warm-up file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed warm-up file: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
