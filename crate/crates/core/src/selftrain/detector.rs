use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::loss::{
    class_slot, decode_box, encode_box, slot_class, softmax, total_loss, LossConstants, LossWeights, Prediction,
    WeightedSample, CLASS_SLOTS,
};
use super::SelfTrainError;
use crate::clustering::{initial_labels, LabelParams};
use crate::cues::footprint_occupancy;
use crate::geometry::{iou_bev, nms, points_in_box, voxelize, wrap_angle, Box3D, ObjectClass, VoxelGrid};
use crate::occupancy::{voxel_features, OccupancyPredictor, VoxelMask, FEATURE_LEN};
use crate::scene::DenseScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    pub positives: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Detection network interface used by self-training.
pub trait Detector: Sync {
    /// Fits the detector to per-scene labels; each label's `weight` is its
    /// sample weight.
    fn train(&mut self, scenes: &[DenseScene], labels: &[Vec<Box3D>]) -> Result<TrainReport, SelfTrainError>;

    /// Scored boxes in the coordinates of `scene`.
    fn infer(&self, scene: &DenseScene) -> Result<Vec<Box3D>, SelfTrainError>;

    /// Initializes shared layers from warm-up parameters.
    fn warm_start(&mut self, _predictor: &OccupancyPredictor) -> Result<(), SelfTrainError> {
        Ok(())
    }
}

/// Echoes its training labels for the matching frame, following whatever
/// transform has been applied to the scene.
#[derive(Debug, Clone, Default)]
pub struct PassThroughDetector {
    labels: BTreeMap<u32, Vec<Box3D>>,
}

impl Detector for PassThroughDetector {
    fn train(&mut self, scenes: &[DenseScene], labels: &[Vec<Box3D>]) -> Result<TrainReport, SelfTrainError> {
        if scenes.len() != labels.len() {
            return Err(SelfTrainError::Misaligned(labels.len(), scenes.len()));
        }
        self.labels = scenes.iter().zip(labels).map(|(s, l)| (s.frame_id(), l.clone())).collect();
        let n = labels.iter().map(Vec::len).sum();
        Ok(TrainReport { samples: n, positives: n, initial_loss: 0.0, final_loss: 0.0 })
    }

    fn infer(&self, scene: &DenseScene) -> Result<Vec<Box3D>, SelfTrainError> {
        let boxes = self.labels.get(&scene.frame_id()).map(Vec::as_slice).unwrap_or_default();
        Ok(boxes.iter().map(|b| scene.view.apply_box(b)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDetectorConfig {
    /// Proposal generator.
    pub proposals: LabelParams,
    pub voxel_size: f64,
    /// Width of the occupancy-shaped feature layer.
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// BEV IoU for a proposal to take a label as its target.
    pub match_iou: f64,
    /// Proposals whose best BEV IoU is below this are background samples.
    pub background_iou: f64,
    pub background_weight: f64,
    pub weights: LossWeights,
    pub loss: LossConstants,
    pub seed: u64,
}

impl Default for ToyDetectorConfig {
    fn default() -> Self {
        Self {
            proposals: LabelParams::default(),
            voxel_size: 0.4,
            hidden: 16,
            epochs: 300,
            learning_rate: 0.1,
            score_threshold: 0.5,
            nms_iou: 0.1,
            match_iou: 0.3,
            background_iou: 0.1,
            background_weight: 1.0,
            weights: LossWeights::default(),
            loss: LossConstants::default(),
            seed: 0,
        }
    }
}

const HANDCRAFTED: usize = 14;

/// Loss growth over the initial value that counts as divergence.
const DIVERGENCE_FACTOR: f64 = 100.0;

/// Features of the proposals of one or more scenes together with their
/// regression anchors and training targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBatch {
    pub features: Vec<Vec<f64>>,
    pub anchors: Vec<[f64; 8]>,
    pub targets: Vec<Box3D>,
    pub slots: Vec<usize>,
    pub omegas: Vec<f64>,
}

impl FeatureBatch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Scores clustering proposals with linear class and box heads on top of
/// handcrafted shape features and mean-pooled voxel embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGridDetector {
    pub cfg: ToyDetectorConfig,
    /// Frozen voxel embedding; only its first layer is used.
    pub backbone: OccupancyPredictor,
    /// `CLASS_SLOTS x dim` class head followed by `8 x dim` box head.
    pub heads: Vec<f64>,
    /// Per-feature standardization fitted on the last training batch.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ToyGridDetector {
    pub fn new(cfg: ToyDetectorConfig) -> Self {
        let backbone = OccupancyPredictor::new(FEATURE_LEN, cfg.hidden, cfg.seed);
        let dim = HANDCRAFTED + cfg.hidden;
        Self { cfg, backbone, heads: vec![0.0; (CLASS_SLOTS + 8) * dim], shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn feature_dim(&self) -> usize {
        HANDCRAFTED + self.cfg.hidden
    }

    fn scene_grid(&self, scene: &DenseScene) -> Result<Option<VoxelGrid>, SelfTrainError> {
        let pts = &scene.cloud.points;
        if pts.is_empty() {
            return Ok(None);
        }
        let s = self.cfg.voxel_size;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pts {
            for (k, v) in p.xyz().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let origin = [(lo[0] / s).floor() * s, (lo[1] / s).floor() * s, (lo[2] / s).floor() * s];
        let extents = [0, 1, 2].map(|k| ((hi[k] - origin[k]) / s).floor() as usize + 1);
        Ok(Some(voxelize(&scene.cloud, origin, [s; 3], extents)?))
    }

    /// Proposals of a scene and their feature vectors.
    pub fn proposals(&self, scene: &DenseScene) -> Result<Vec<(Box3D, Vec<f64>)>, SelfTrainError> {
        let boxes = initial_labels(scene, &self.cfg.proposals)?.boxes;
        let Some(grid) = self.scene_grid(scene)? else {
            return Ok(Vec::new());
        };
        let mask = VoxelMask { masked: BTreeSet::new(), unmasked: grid.cells.keys().copied().collect() };
        let pts = &scene.cloud.points;
        let scale = scene.view.scale;
        Ok(boxes
            .into_iter()
            .map(|b| {
                let inside = points_in_box(pts, &b);
                let n = inside.len() as f64;
                let intensity = if inside.is_empty() { 0.0 } else { inside.iter().map(|&i| pts[i].intensity).sum::<f64>() / n };
                let occ = footprint_occupancy(pts, &b, 8) as f64 / 64.0;
                let mut f = vec![
                    1.0,
                    (b.l / scale).ln(),
                    (b.w / scale).ln(),
                    (b.h / scale).ln(),
                    (1.0 + n).ln() / 5.0,
                    b.range() / scale / 75.0,
                    occ,
                    b.z_min() / scale,
                    intensity,
                    b.z_max() / scale,
                ];
                // Partially seen objects extend away from the sensor.
                let r = b.x.hypot(b.y).max(1e-6);
                let (ux, uy) = (b.x / r, b.y / r);
                let lw = (b.w / scale).ln();
                f.extend([ux, uy, ux * lw, uy * lw]);
                let voxels: BTreeSet<_> = inside.iter().filter_map(|&i| grid.locate(&pts[i])).collect();
                let mut pooled = vec![0.0; self.cfg.hidden];
                for v in &voxels {
                    for (acc, a) in pooled.iter_mut().zip(self.backbone.embed(&voxel_features(&grid, &mask, v))) {
                        *acc += a;
                    }
                }
                let nv = voxels.len().max(1) as f64;
                f.extend(pooled.into_iter().map(|a| a / nv));
                (b, f)
            })
            .collect())
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| (x - m) * s).collect()
    }

    fn fit_standardization(&mut self, features: &[Vec<f64>]) {
        let n = features.len() as f64;
        for k in 1..self.feature_dim() {
            let mean = features.iter().map(|f| f[k]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n;
            self.shift[k] = mean;
            self.scale[k] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
    }

    fn head_outputs(&self, raw: &[f64], anchor: &[f64; 8]) -> Prediction {
        let z = self.standardize(raw);
        let dim = self.feature_dim();
        let dot = |row: usize| self.heads[row * dim..(row + 1) * dim].iter().zip(&z).map(|(w, x)| w * x).sum::<f64>();
        let logits = (0..CLASS_SLOTS).map(dot).collect();
        let mut regression = *anchor;
        for (r, v) in regression.iter_mut().enumerate() {
            *v += dot(CLASS_SLOTS + r);
        }
        Prediction { regression, logits }
    }

    /// Training samples for one scene: matched proposals regress to their
    /// label, clearly unmatched proposals are background.
    pub fn build_batch(&self, scene: &DenseScene, labels: &[Box3D]) -> Result<FeatureBatch, SelfTrainError> {
        let mut batch = FeatureBatch::default();
        for (p, f) in self.proposals(scene)? {
            let best = labels
                .iter()
                .map(|l| iou_bev(&p, l))
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let (target, slot, omega) = match best {
                Some((j, iou)) if iou >= self.cfg.match_iou => {
                    let mut t = labels[j];
                    if wrap_angle(t.yaw - p.yaw).abs() > std::f64::consts::FRAC_PI_2 {
                        t.yaw = wrap_angle(t.yaw + std::f64::consts::PI);
                    }
                    (t, class_slot(t.class), t.weight)
                }
                Some((_, iou)) if iou >= self.cfg.background_iou => continue,
                _ => (p, 0, self.cfg.background_weight),
            };
            batch.anchors.push(encode_box(&p));
            batch.features.push(f);
            batch.targets.push(target);
            batch.slots.push(slot);
            batch.omegas.push(omega);
        }
        Ok(batch)
    }

    /// Weighted total loss of a batch and its gradient w.r.t. the heads.
    pub fn loss_and_gradient(&self, batch: &FeatureBatch) -> Result<(f64, Vec<f64>), SelfTrainError> {
        let samples: Vec<WeightedSample> = (0..batch.len())
            .map(|i| WeightedSample {
                target: batch.targets[i],
                class_slot: batch.slots[i],
                prediction: self.head_outputs(&batch.features[i], &batch.anchors[i]),
                omega: batch.omegas[i],
            })
            .collect();
        let total = total_loss(&samples, &self.cfg.weights, &self.cfg.loss)?;
        let dim = self.feature_dim();
        let mut grad = vec![0.0; self.heads.len()];
        for (g, raw) in total.gradients.iter().zip(&batch.features) {
            let z = self.standardize(raw);
            let rows = g.logits.iter().chain(g.regression.iter());
            for (r, gr) in rows.enumerate() {
                if *gr == 0.0 {
                    continue;
                }
                for (acc, x) in grad[r * dim..(r + 1) * dim].iter_mut().zip(&z) {
                    *acc += gr * x;
                }
            }
        }
        Ok((total.value, grad))
    }

    /// Full-batch gradient descent; returns the loss before and after.
    fn descend(&mut self, batch: &FeatureBatch) -> Result<(f64, f64), SelfTrainError> {
        let (initial_loss, _) = self.loss_and_gradient(batch)?;
        let mut last = initial_loss;
        for epoch in 0..self.cfg.epochs {
            let (loss, grad) = self.loss_and_gradient(batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss.max(1e-6) || grad.iter().any(|g| !g.is_finite()) {
                return Err(SelfTrainError::Diverged { epoch, last });
            }
            last = loss;
            for (w, g) in self.heads.iter_mut().zip(&grad) {
                *w -= self.cfg.learning_rate * g;
            }
        }
        let (final_loss, _) = self.loss_and_gradient(batch)?;
        if !final_loss.is_finite() || final_loss > DIVERGENCE_FACTOR * initial_loss.max(1e-6) {
            return Err(SelfTrainError::Diverged { epoch: self.cfg.epochs, last });
        }
        Ok((initial_loss, final_loss))
    }
}

fn merge(batches: Vec<FeatureBatch>) -> FeatureBatch {
    let mut out = FeatureBatch::default();
    for b in batches {
        out.features.extend(b.features);
        out.anchors.extend(b.anchors);
        out.targets.extend(b.targets);
        out.slots.extend(b.slots);
        out.omegas.extend(b.omegas);
    }
    out
}

impl Detector for ToyGridDetector {
    fn train(&mut self, scenes: &[DenseScene], labels: &[Vec<Box3D>]) -> Result<TrainReport, SelfTrainError> {
        if scenes.len() != labels.len() {
            return Err(SelfTrainError::Misaligned(labels.len(), scenes.len()));
        }
        if self.cfg.epochs == 0 || !(self.cfg.learning_rate > 0.0) {
            return Err(SelfTrainError::Param("epochs and learning_rate must be positive".into()));
        }
        use rayon::prelude::*;
        let batches = scenes
            .par_iter()
            .zip(labels.par_iter())
            .map(|(s, l)| self.build_batch(s, l))
            .collect::<Result<Vec<_>, _>>()?;
        let batch = merge(batches);
        if batch.is_empty() {
            return Err(SelfTrainError::EmptyBatch);
        }
        let positives = batch.slots.iter().filter(|&&s| s != 0).count();
        let before = self.clone();
        self.fit_standardization(&batch.features);
        let result = self.descend(&batch);
        if result.is_err() {
            *self = before;
        }
        let (initial_loss, final_loss) = result?;
        Ok(TrainReport { samples: batch.len(), positives, initial_loss, final_loss })
    }

    fn infer(&self, scene: &DenseScene) -> Result<Vec<Box3D>, SelfTrainError> {
        let mut out = Vec::new();
        for (p, f) in self.proposals(scene)? {
            let pred = self.head_outputs(&f, &encode_box(&p));
            let probs = softmax(&pred.logits);
            let objectness = 1.0 - probs[0];
            if objectness < self.cfg.score_threshold {
                continue;
            }
            let slot = (1..CLASS_SLOTS).max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a))).unwrap_or(1);
            let class = slot_class(slot).unwrap_or(ObjectClass::Unknown);
            let b = decode_box(&pred.regression, class).with_score(objectness.clamp(0.0, 1.0));
            if b.validate().is_ok() {
                out.push(b);
            }
        }
        Ok(nms(&out, self.cfg.nms_iou))
    }

    fn warm_start(&mut self, predictor: &OccupancyPredictor) -> Result<(), SelfTrainError> {
        if predictor.inputs != FEATURE_LEN || predictor.hidden != self.cfg.hidden {
            return Err(SelfTrainError::Param(format!(
                "warm-up predictor is {}x{}, detector expects {}x{}",
                predictor.inputs, predictor.hidden, FEATURE_LEN, self.cfg.hidden
            )));
        }
        self.backbone = predictor.clone();
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{Point, PointCloud};

    /// Points on the four side faces and the top of `b`, every `step` meters.
    pub(crate) fn shell_points(b: &Box3D, step: f64, out: &mut Vec<Point>) {
        let (s, c) = b.yaw.sin_cos();
        let mut push = |u: f64, v: f64, w: f64| {
            out.push(Point::new(b.x + c * u - s * v, b.y + s * u + c * v, b.z + w, 0.4));
        };
        let nl = (b.l / step).ceil() as usize;
        let nw = (b.w / step).ceil() as usize;
        let nh = (b.h / step).ceil() as usize;
        for k in 0..=nh {
            let w = -b.h / 2.0 + b.h * k as f64 / nh as f64;
            for i in 0..=nl {
                let u = -b.l / 2.0 + b.l * i as f64 / nl as f64;
                push(u, -b.w / 2.0 * 0.98, w);
                push(u, b.w / 2.0 * 0.98, w);
            }
            for j in 0..=nw {
                let v = -b.w / 2.0 + b.w * j as f64 / nw as f64;
                push(-b.l / 2.0 * 0.98, v, w);
                push(b.l / 2.0 * 0.98, v, w);
            }
        }
        for i in 0..=nl {
            for j in 0..=nw {
                let u = -b.l / 2.0 + b.l * i as f64 / nl as f64;
                let v = -b.w / 2.0 + b.w * j as f64 / nw as f64;
                push(u * 0.98, v * 0.98, b.h / 2.0 * 0.98);
            }
        }
    }

    pub(crate) fn toy_scene(frame: u32, shift: f64) -> (DenseScene, Vec<Box3D>) {
        let cars = vec![
            Box3D::new([10.0 + shift, 4.0, 0.85], [4.6, 1.9, 1.7], 0.2, ObjectClass::Vehicle),
            Box3D::new([-12.0, -6.0 + shift, 0.85], [4.4, 1.8, 1.6], -1.3, ObjectClass::Vehicle),
            Box3D::new([4.0, -14.0, 0.85], [0.7, 0.7, 1.7], 0.0, ObjectClass::Pedestrian),
        ];
        let clutter = [
            Box3D::new([-5.0, 12.0, 1.5], [0.3, 0.3, 3.0], 0.0, ObjectClass::Unknown),
            Box3D::new([15.0 - shift, -9.0, 0.75], [8.0, 0.3, 1.5], 0.7, ObjectClass::Unknown),
        ];
        let mut pts = Vec::new();
        for b in cars.iter().chain(&clutter) {
            shell_points(b, 0.15, &mut pts);
        }
        (DenseScene::new(PointCloud::new(pts, frame)), cars)
    }

    fn quick_cfg() -> ToyDetectorConfig {
        ToyDetectorConfig { epochs: 200, ..Default::default() }
    }

    #[test]
    fn pass_through_follows_view() {
        let (scene, labels) = toy_scene(3, 0.0);
        let mut det = PassThroughDetector::default();
        det.train(std::slice::from_ref(&scene), std::slice::from_ref(&labels)).unwrap();
        assert_eq!(det.infer(&scene).unwrap(), labels);
        let t = crate::scene::BevTransform { yaw: 0.4, ..crate::scene::BevTransform::IDENTITY };
        let moved = det.infer(&scene.transformed(&t)).unwrap();
        for (m, l) in moved.iter().zip(&labels) {
            let back = t.invert_box(m);
            assert!((back.x - l.x).abs() < 1e-12 && (back.y - l.y).abs() < 1e-12);
        }
        let (other, _) = toy_scene(4, 0.0);
        assert!(det.infer(&other).unwrap().is_empty());
    }

    #[test]
    fn toy_detector_learns_labelled_clusters() {
        let data: Vec<_> = (0..3).map(|k| toy_scene(k, k as f64 * 0.5)).collect();
        let scenes: Vec<_> = data.iter().map(|d| d.0.clone()).collect();
        let labels: Vec<_> = data.iter().map(|d| d.1.clone()).collect();
        let mut det = ToyGridDetector::new(quick_cfg());
        let report = det.train(&scenes, &labels).unwrap();
        assert!(report.final_loss < report.initial_loss);
        assert!(report.positives >= 6, "{report:?}");
        let found = det.infer(&scenes[0]).unwrap();
        for l in &labels[0] {
            assert!(found.iter().any(|f| iou_bev(f, l) > 0.5), "missed {l:?} in {found:?}");
        }
        assert!(found.len() <= labels[0].len() + 1, "{found:?}");
        for b in &found {
            b.validate().unwrap();
        }
        assert_eq!(found, det.infer(&scenes[0]).unwrap());
    }

    #[test]
    fn gradient_is_homogeneous_in_weights() {
        let (scene, labels) = toy_scene(0, 0.0);
        let mut det = ToyGridDetector::new(quick_cfg());
        det.heads.iter_mut().enumerate().for_each(|(i, w)| *w = 0.01 * ((i * 7919 % 13) as f64 - 6.0));
        let batch = det.build_batch(&scene, &labels).unwrap();
        assert!(batch.len() >= 4);
        let (l1, g1) = det.loss_and_gradient(&batch).unwrap();
        let mut scaled = batch.clone();
        scaled.omegas.iter_mut().for_each(|o| *o *= 3.5);
        let (l2, g2) = det.loss_and_gradient(&scaled).unwrap();
        assert!((l2 - 3.5 * l1).abs() <= 1e-12 * l2.abs().max(1.0));
        let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (n1, n2) = (norm(&g1), norm(&g2));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a / n1 - b / n2).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weight_batch_has_zero_gradient() {
        let (scene, labels) = toy_scene(0, 0.0);
        let det = ToyGridDetector::new(quick_cfg());
        let mut batch = det.build_batch(&scene, &labels).unwrap();
        batch.omegas.iter_mut().for_each(|o| *o = 0.0);
        let (l, g) = det.loss_and_gradient(&batch).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn warm_start_checks_shape() {
        let mut det = ToyGridDetector::new(quick_cfg());
        assert!(det.warm_start(&OccupancyPredictor::new(FEATURE_LEN, 8, 1)).is_err());
        let p = OccupancyPredictor::new(FEATURE_LEN, 16, 9);
        det.warm_start(&p).unwrap();
        assert_eq!(det.backbone, p);
    }

    #[test]
    fn divergence_restores_parameters() {
        let (scene, labels) = toy_scene(0, 0.0);
        let mut det = ToyGridDetector::new(ToyDetectorConfig { learning_rate: 1e200, epochs: 50, ..Default::default() });
        let before = det.heads.clone();
        let err = det.train(&[scene], &[labels]).unwrap_err();
        assert!(matches!(err, SelfTrainError::Diverged { .. }), "{err:?}");
        assert_eq!(det.heads, before);
    }
}
