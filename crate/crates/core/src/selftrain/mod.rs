//! Weight-adapted self-training: per-label weights, the weighted detection
//! loss, detectors, test-time augmentation and the round loop.

mod detector;
mod loss;
mod rounds;
mod tta;

pub use detector::{Detector, FeatureBatch, PassThroughDetector, ToyDetectorConfig, ToyGridDetector, TrainReport};
pub use loss::{
    class_slot, cross_entropy, decode_box, encode_box, focal_loss, sample_weight, slot_class, smooth_l1, softmax,
    total_loss, LossConstants, LossWeights, Prediction, SampleGradient, TotalLoss, WeightedSample, CLASS_SLOTS,
};
pub use rounds::{self_train, weighted_labels, RoundOutcome, SelfTrainConfig};
pub use tta::{standard_augmentations, tta_infer, validate_augmentations};

use crate::clustering::ClusteringError;
use crate::geometry::GeometryError;
use crate::occupancy::OccupancyError;
use crate::reasoner::ReasonerError;

#[derive(Debug, thiserror::Error)]
pub enum SelfTrainError {
    #[error("invalid self-training parameter: {0}")]
    Param(String),
    #[error("no training samples")]
    EmptyBatch,
    #[error("detector training diverged at epoch {epoch} (last finite loss {last})")]
    Diverged { epoch: usize, last: f64 },
    #[error("{0} label sets for {1} scenes")]
    Misaligned(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}
