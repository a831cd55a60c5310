use serde::{Deserialize, Serialize};
use tracing::debug;

use super::dataset::{build_targets, voxel_features, FEATURE_LEN};
use super::mask::{sample_mask, MaskSchedule};
use super::predictor::OccupancyPredictor;
use super::OccupancyError;
use crate::geometry::{voxelize, Box3D, VoxelGrid};
use crate::scene::DenseScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmupConfig {
    pub voxel_size: f64,
    /// Half-width of the square grid around the sensor (meters).
    pub range_xy: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Cap on the prediction domain of a single scene.
    pub max_domain_per_scene: usize,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.4,
            range_xy: 64.0,
            z_min: -1.0,
            z_max: 3.0,
            hidden: 16,
            epochs: 50,
            learning_rate: 0.1,
            max_domain_per_scene: 4000,
        }
    }
}

impl WarmupConfig {
    pub fn grid_spec(&self) -> ([f64; 3], [f64; 3], [usize; 3]) {
        let n_xy = (2.0 * self.range_xy / self.voxel_size).ceil() as usize;
        let n_z = ((self.z_max - self.z_min) / self.voxel_size).ceil().max(1.0) as usize;
        (
            [-self.range_xy, -self.range_xy, self.z_min],
            [self.voxel_size; 3],
            [n_xy.max(1), n_xy.max(1), n_z],
        )
    }

    pub fn voxelize(&self, scene: &DenseScene) -> Result<VoxelGrid, OccupancyError> {
        let (origin, cell, extents) = self.grid_spec();
        Ok(voxelize(&scene.cloud, origin, cell, extents)?)
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        if !(self.voxel_size > 0.0 && self.range_xy > 0.0 && self.z_max > self.z_min) {
            return Err(OccupancyError::Param("grid geometry must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(OccupancyError::Param("hidden must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(OccupancyError::Param("learning_rate must be > 0".into()));
        }
        if self.max_domain_per_scene < 2 {
            return Err(OccupancyError::Param("max_domain_per_scene must be >= 2".into()));
        }
        Ok(())
    }
}

/// Features and targets of one scene's prediction domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSamples {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Voxelize, mask and build the supervised domain for one scene.
pub fn prepare_samples(
    scene: &DenseScene,
    labels: &[Box3D],
    sched: &MaskSchedule,
    cfg: &WarmupConfig,
) -> Result<SceneSamples, OccupancyError> {
    let grid = cfg.voxelize(scene)?;
    let mask = sample_mask(&grid, &scene.cloud, labels, sched)?;
    let targets = build_targets(&grid, &mask, sched.seed ^ 0x9e37_79b9_7f4a_7c15, cfg.max_domain_per_scene);
    let features = targets.domain.iter().map(|v| voxel_features(&grid, &mask, v)).collect();
    Ok(SceneSamples { features, targets: targets.targets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupOutcome {
    pub predictor: OccupancyPredictor,
    /// Full-data loss before any update.
    pub initial_loss: f64,
    /// Full-data loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl WarmupOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

fn mean_loss(pred: &OccupancyPredictor, data: &[SceneSamples]) -> Result<f64, OccupancyError> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for s in data.iter().filter(|s| !s.targets.is_empty()) {
        let (l, _) = pred.loss_and_gradient(&s.features, &s.targets)?;
        acc += l * s.targets.len() as f64;
        n += s.targets.len();
    }
    if n == 0 {
        return Err(OccupancyError::EmptyDomain);
    }
    Ok(acc / n as f64)
}

/// Gradient descent on the occupancy proxy task, one step per scene per
/// epoch. Each scene is masked with `sched.seed + scene index`.
pub fn train_warmup(
    scenes: &[DenseScene],
    labels: &[Vec<Box3D>],
    sched: &MaskSchedule,
    cfg: &WarmupConfig,
) -> Result<WarmupOutcome, OccupancyError> {
    cfg.validate()?;
    sched.validate()?;
    if scenes.is_empty() {
        return Err(OccupancyError::Param("at least one scene is required".into()));
    }
    if cfg.epochs == 0 {
        return Err(OccupancyError::Param("epochs must be >= 1".into()));
    }
    if labels.len() != scenes.len() {
        return Err(OccupancyError::Param(format!("{} label sets for {} scenes", labels.len(), scenes.len())));
    }
    let data: Vec<SceneSamples> = scenes
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(k, (scene, lab))| {
            let s = MaskSchedule { seed: sched.seed.wrapping_add(k as u64), ..sched.clone() };
            prepare_samples(scene, lab, &s, cfg)
        })
        .collect::<Result<_, _>>()?;

    let mut predictor = OccupancyPredictor::new(FEATURE_LEN, cfg.hidden, sched.seed);
    let initial_loss = mean_loss(&predictor, &data)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut params = predictor.parameters();
    for epoch in 0..cfg.epochs {
        for s in data.iter().filter(|s| !s.targets.is_empty()) {
            let (_, g) = predictor.loss_and_gradient(&s.features, &s.targets)?;
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= cfg.learning_rate * gi;
            }
            predictor.set_parameters(&params)?;
        }
        let loss = mean_loss(&predictor, &data)?;
        if !loss.is_finite() {
            return Err(OccupancyError::Diverged { epoch, last: epoch_losses.last().copied().unwrap_or(initial_loss) });
        }
        debug!(epoch, loss, "warm-up epoch");
        epoch_losses.push(loss);
    }
    Ok(WarmupOutcome { predictor, initial_loss, epoch_losses })
}

/// Mean of per-class recall at a 0.5 decision threshold.
pub fn balanced_accuracy(pred: &OccupancyPredictor, data: &[SceneSamples]) -> f64 {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for s in data {
        for (x, &y) in s.features.iter().zip(&s.targets) {
            let hit = pred.predict(x) >= 0.5;
            if y > 0.5 {
                pos += 1;
                tp += usize::from(hit);
            } else {
                neg += 1;
                tn += usize::from(!hit);
            }
        }
    }
    let tpr = if pos > 0 { tp as f64 / pos as f64 } else { 0.0 };
    let tnr = if neg > 0 { tn as f64 / neg as f64 } else { 0.0 };
    0.5 * (tpr + tnr)
}
