use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::detector::{Detector, TrainReport};
use super::loss::{sample_weight, LossWeights};
use super::tta::{tta_infer, validate_augmentations};
use super::SelfTrainError;
use crate::geometry::Box3D;
use crate::occupancy::OccupancyPredictor;
use crate::reasoner::{instance_cued_refinement, Branch, BranchCounts, CueReasoner, IcrConfig, IcrOutcome, RemoteStats};
use crate::scene::{BevTransform, DenseScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainConfig {
    pub rounds: usize,
    pub weights: LossWeights,
    pub augmentations: Vec<BevTransform>,
    pub tta_nms_iou: f64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            weights: LossWeights::default(),
            augmentations: vec![BevTransform::IDENTITY],
            tta_nms_iou: 0.1,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        if self.rounds == 0 {
            return Err(SelfTrainError::Param("rounds must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tta_nms_iou) {
            return Err(SelfTrainError::Param(format!("tta_nms_iou {} outside [0, 1]", self.tta_nms_iou)));
        }
        self.weights.validate()?;
        validate_augmentations(&self.augmentations)
    }
}

/// Labels with `weight = omega` from their refined scores; boxes that took
/// branch B keep the refiner's extra downweight on top.
pub fn weighted_labels(icr: &IcrOutcome, w: &LossWeights, downweight: f64) -> Result<Vec<Vec<Box3D>>, SelfTrainError> {
    icr.frames
        .iter()
        .map(|f| {
            f.outcome
                .boxes
                .iter()
                .zip(&f.outcome.sources)
                .zip(&f.scores)
                .map(|((b, &src), s)| {
                    let mut omega = sample_weight(s.consistency, s.s_rea, w)?;
                    if f.outcome.branches[src] == Branch::B {
                        omega *= downweight;
                    }
                    Ok(b.with_weight(omega))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// 1-based round number.
    pub round: usize,
    pub labels: Vec<Vec<Box3D>>,
    /// Branch counts per frame; empty when the round was aborted.
    pub branches: Vec<(u32, BranchCounts)>,
    pub train: Option<TrainReport>,
    /// Set when training diverged and the previous labels were carried over.
    pub diverged: Option<String>,
    pub detections: usize,
    pub reasoner_stats: Option<RemoteStats>,
}

impl RoundOutcome {
    pub fn counts(&self) -> BranchCounts {
        let mut c = BranchCounts::default();
        for (_, b) in &self.branches {
            c += *b;
        }
        c
    }

    pub fn label_count(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }
}

/// Train on the current labels, re-detect with TTA, refine the detections
/// with instance cues and reweight them; repeat for `cfg.rounds` rounds.
pub fn self_train(
    scenes: &[DenseScene],
    initial: &[Vec<Box3D>],
    det: &mut dyn Detector,
    reasoner: &mut dyn CueReasoner,
    warm_start: Option<&OccupancyPredictor>,
    icr: &IcrConfig,
    cfg: &SelfTrainConfig,
) -> Result<Vec<RoundOutcome>, SelfTrainError> {
    cfg.validate()?;
    if scenes.len() != initial.len() {
        return Err(SelfTrainError::Misaligned(initial.len(), scenes.len()));
    }
    for b in initial.iter().flatten() {
        b.validate()?;
    }
    if let Some(p) = warm_start {
        det.warm_start(p)?;
    }
    let mut current = initial.to_vec();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let train = match det.train(scenes, &current) {
            Ok(r) => r,
            Err(SelfTrainError::Diverged { epoch, last }) => {
                let msg = format!("training diverged at epoch {epoch} (last finite loss {last})");
                warn!(round, "{msg}; keeping previous labels");
                rounds.push(RoundOutcome {
                    round,
                    labels: current.clone(),
                    branches: Vec::new(),
                    train: None,
                    diverged: Some(msg),
                    detections: 0,
                    reasoner_stats: None,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let shared: &dyn Detector = det;
        let detections = scenes
            .par_iter()
            .map(|s| tta_infer(shared, s, &cfg.augmentations, cfg.tta_nms_iou))
            .collect::<Result<Vec<_>, _>>()?;
        let detected = detections.iter().map(Vec::len).sum();
        let refined = instance_cued_refinement(scenes, &detections, reasoner, icr)?;
        let labels = weighted_labels(&refined, &cfg.weights, icr.refine.downweight_factor)?;
        for b in labels.iter().flatten() {
            b.validate()?;
        }
        let branches = refined.frames.iter().map(|f| (f.frame_id, f.outcome.counts)).collect();
        info!(round, detected, kept = labels.iter().map(Vec::len).sum::<usize>(), "self-training round");
        current = labels.clone();
        rounds.push(RoundOutcome {
            round,
            labels,
            branches,
            train: Some(train),
            diverged: None,
            detections: detected,
            reasoner_stats: reasoner.stats().cloned(),
        });
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::{NoOpReasoner, RuleReasoner};
    use crate::selftrain::detector::tests::toy_scene;
    use crate::selftrain::{PassThroughDetector, ToyDetectorConfig, ToyGridDetector};

    fn data() -> (Vec<DenseScene>, Vec<Vec<Box3D>>) {
        let d: Vec<_> = (0..3).map(|k| toy_scene(k, 0.3 * k as f64)).collect();
        (d.iter().map(|x| x.0.clone()).collect(), d.into_iter().map(|x| x.1).collect())
    }

    #[test]
    fn pass_through_with_noop_is_a_fixed_point() {
        let (scenes, raw) = data();
        let cfg = SelfTrainConfig { rounds: 1, ..Default::default() };
        let icr = IcrConfig::default();
        let refined = instance_cued_refinement(&scenes, &raw, &mut NoOpReasoner, &icr).unwrap();
        let initial = weighted_labels(&refined, &cfg.weights, icr.refine.downweight_factor).unwrap();
        let mut det = PassThroughDetector::default();
        let out = self_train(&scenes, &initial, &mut det, &mut NoOpReasoner, None, &icr, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].labels, initial);
        assert_eq!(out[0].counts().total(), initial.iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn zero_rounds_rejected() {
        let (scenes, raw) = data();
        let cfg = SelfTrainConfig { rounds: 0, ..Default::default() };
        let err = self_train(&scenes, &raw, &mut PassThroughDetector::default(), &mut NoOpReasoner, None, &IcrConfig::default(), &cfg);
        assert!(matches!(err, Err(SelfTrainError::Param(_))));
    }

    #[test]
    fn divergence_keeps_previous_labels() {
        let (scenes, raw) = data();
        let cfg = SelfTrainConfig { rounds: 2, ..Default::default() };
        let mut det = ToyGridDetector::new(ToyDetectorConfig { learning_rate: 1e200, epochs: 20, ..Default::default() });
        let mut rules = RuleReasoner { prototypes: Default::default(), rules: Default::default() };
        let out = self_train(&scenes, &raw, &mut det, &mut rules, None, &IcrConfig::default(), &cfg).unwrap();
        assert!(out.iter().all(|r| r.diverged.is_some() && r.labels == raw));
    }

    #[test]
    fn toy_rounds_are_deterministic_and_valid() {
        let (scenes, raw) = data();
        let cfg = SelfTrainConfig { rounds: 2, ..Default::default() };
        let run = || {
            let mut det = ToyGridDetector::new(ToyDetectorConfig { epochs: 100, ..Default::default() });
            let mut rules = RuleReasoner { prototypes: Default::default(), rules: Default::default() };
            self_train(&scenes, &raw, &mut det, &mut rules, None, &IcrConfig::default(), &cfg).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.len(), 2);
        for r in &a {
            assert!(r.diverged.is_none());
            for b in r.labels.iter().flatten() {
                b.validate().unwrap();
            }
        }
        assert!(a[1].label_count() > 0);
    }
}
