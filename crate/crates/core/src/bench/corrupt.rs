use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::geometry::{iou_bev, wrap_angle, Box3D, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    /// Expected injected false positives per truth box.
    pub fp_rate: f64,
    /// Relative standard deviation of multiplicative size noise.
    pub size_sigma: f64,
    pub yaw_flip: f64,
    /// `confusion[a][b]`: probability that class `a` is relabelled `b`.
    /// Missing rows and the remaining mass keep the class.
    pub confusion: BTreeMap<ObjectClass, BTreeMap<ObjectClass, f64>>,
    pub drop_rate: f64,
    /// False positives are placed between these ranges.
    pub fp_range: [f64; 2],
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            fp_rate: 0.0,
            size_sigma: 0.0,
            yaw_flip: 0.0,
            confusion: BTreeMap::new(),
            drop_rate: 0.0,
            fp_range: [5.0, 50.0],
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut bad = Vec::new();
        for (name, v) in [("fp_rate", self.fp_rate), ("yaw_flip", self.yaw_flip), ("drop_rate", self.drop_rate)] {
            if !(0.0..=1.0).contains(&v) {
                bad.push(name.to_string());
            }
        }
        if !(0.0..0.5).contains(&self.size_sigma) {
            bad.push("size_sigma".into());
        }
        for (from, row) in &self.confusion {
            let total: f64 = row.values().sum();
            if row.values().any(|p| !(0.0..=1.0).contains(p)) || total > 1.0 + 1e-12 {
                bad.push(format!("confusion.{}", from.as_str()));
            }
        }
        if !(self.fp_range[0] >= 0.0 && self.fp_range[1] > self.fp_range[0]) {
            bad.push("fp_range".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Spec(bad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    Dropped,
    SizeJitter,
    YawFlip,
    ClassSwap { from: ObjectClass, to: ObjectClass },
    FalsePositive,
}

/// What happened to one truth box (`truth = None` for injected boxes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionEntry {
    pub truth: Option<usize>,
    /// Position in the corrupted output; `None` when dropped.
    pub output: Option<usize>,
    pub applied: Vec<Corruption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedLabels {
    pub boxes: Vec<Box3D>,
    pub log: Vec<CorruptionEntry>,
}

impl CorruptedLabels {
    pub fn injected(&self) -> usize {
        self.log.iter().filter(|e| e.truth.is_none()).count()
    }
}

fn confuse(rng: &mut ChaCha8Rng, class: ObjectClass, spec: &CorruptionSpec) -> ObjectClass {
    let Some(row) = spec.confusion.get(&class) else { return class };
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (to, p) in row {
        acc += p;
        if u < acc {
            return *to;
        }
    }
    class
}

/// Applies drop, size jitter, yaw flip and class confusion to each truth box
/// in that order, then injects false positives: each truth box spawns one
/// with probability `fp_rate`, placed in the `fp_range` ring without BEV
/// overlap with any truth box and with a broad random size.
pub fn corrupt_labels(truth: &[Box3D], spec: &CorruptionSpec, seed: u64) -> Result<CorruptedLabels, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.size_sigma.max(1e-12)).expect("valid sigma");
    let mut boxes = Vec::with_capacity(truth.len());
    let mut log = Vec::with_capacity(truth.len());
    for (i, t) in truth.iter().enumerate() {
        let mut applied = Vec::new();
        if spec.drop_rate > 0.0 && rng.random::<f64>() < spec.drop_rate {
            log.push(CorruptionEntry { truth: Some(i), output: None, applied: vec![Corruption::Dropped] });
            continue;
        }
        let mut b = *t;
        if spec.size_sigma > 0.0 {
            let dims = b.dims().map(|d| d * (1.0 + normal.sample(&mut rng)).clamp(0.5, 1.5));
            b.set_dims(dims);
            applied.push(Corruption::SizeJitter);
        }
        if spec.yaw_flip > 0.0 && rng.random::<f64>() < spec.yaw_flip {
            b.yaw = wrap_angle(b.yaw + PI);
            applied.push(Corruption::YawFlip);
        }
        if !spec.confusion.is_empty() {
            let to = confuse(&mut rng, b.class, spec);
            if to != b.class {
                applied.push(Corruption::ClassSwap { from: b.class, to });
                b.class = to;
            }
        }
        log.push(CorruptionEntry { truth: Some(i), output: Some(boxes.len()), applied });
        boxes.push(b);
    }
    let draws = truth.iter().filter(|_| spec.fp_rate > 0.0 && rng.random::<f64>() < spec.fp_rate).count();
    for _ in 0..draws {
        for _ in 0..100 {
            let r = rng.random_range(spec.fp_range[0]..spec.fp_range[1]);
            let a = rng.random_range(-PI..PI);
            let dims = [rng.random_range(0.3..8.0), rng.random_range(0.3..4.0), rng.random_range(0.3..3.5)];
            let class = ObjectClass::KNOWN[rng.random_range(0..ObjectClass::KNOWN.len())];
            let yaw = rng.random_range(-PI..PI);
            let b = Box3D::new([r * a.cos(), r * a.sin(), dims[2] / 2.0], dims, yaw, class)
                .with_score(rng.random_range(0.3..1.0));
            if truth.iter().all(|t| iou_bev(t, &b) == 0.0) {
                log.push(CorruptionEntry { truth: None, output: Some(boxes.len()), applied: vec![Corruption::FalsePositive] });
                boxes.push(b);
                break;
            }
        }
    }
    Ok(CorruptedLabels { boxes, log })
}
