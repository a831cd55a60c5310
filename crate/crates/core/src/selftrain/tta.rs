use super::detector::Detector;
use super::SelfTrainError;
use crate::geometry::{nms, Box3D};
use crate::scene::{BevTransform, DenseScene};

/// Runs `det` on each augmented copy of `scene`, maps the boxes back to the
/// scene's frame and merges them with NMS. A single augmentation is returned
/// without merging; an empty list means identity only.
pub fn tta_infer(
    det: &dyn Detector,
    scene: &DenseScene,
    augmentations: &[BevTransform],
    nms_iou: f64,
) -> Result<Vec<Box3D>, SelfTrainError> {
    let identity = [BevTransform::IDENTITY];
    let augs = if augmentations.is_empty() { &identity[..] } else { augmentations };
    let mut all = Vec::new();
    for aug in augs {
        let boxes = if aug.is_identity() { det.infer(scene)? } else { det.infer(&scene.transformed(aug))? };
        all.extend(boxes.iter().map(|b| aug.invert_box(b)));
    }
    if augs.len() == 1 {
        return Ok(all);
    }
    Ok(nms(&all, nms_iou))
}

/// Identity, BEV flip, rotations by `+-yaw` and the two given scalings.
pub fn standard_augmentations(yaw: f64, scales: [f64; 2]) -> Vec<BevTransform> {
    let mut out = vec![BevTransform::IDENTITY, BevTransform { flip_y: true, ..BevTransform::IDENTITY }];
    for y in [yaw, -yaw] {
        out.push(BevTransform { yaw: y, ..BevTransform::IDENTITY });
    }
    for s in scales {
        out.push(BevTransform { scale: s, ..BevTransform::IDENTITY });
    }
    out
}

/// Checks that every augmentation is one the detector is expected to
/// handle: finite yaw and a scale in `[0.95, 1.05]`.
pub fn validate_augmentations(augs: &[BevTransform]) -> Result<(), SelfTrainError> {
    for (k, a) in augs.iter().enumerate() {
        if !a.yaw.is_finite() || !(0.95..=1.05).contains(&a.scale) {
            return Err(SelfTrainError::Param(format!("augmentation {k} has yaw {} and scale {}", a.yaw, a.scale)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftrain::detector::tests::toy_scene;
    use crate::selftrain::PassThroughDetector;

    fn trained() -> (PassThroughDetector, DenseScene, Vec<Box3D>) {
        let (scene, labels) = toy_scene(1, 0.0);
        let mut det = PassThroughDetector::default();
        det.train(std::slice::from_ref(&scene), std::slice::from_ref(&labels)).unwrap();
        (det, scene, labels)
    }

    #[test]
    fn identity_equals_plain_infer() {
        let (det, scene, _) = trained();
        let plain = det.infer(&scene).unwrap();
        assert_eq!(tta_infer(&det, &scene, &[BevTransform::IDENTITY], 0.1).unwrap(), plain);
        assert_eq!(tta_infer(&det, &scene, &[], 0.1).unwrap(), plain);
    }

    #[test]
    fn pass_through_copies_collapse_to_labels() {
        let (det, scene, labels) = trained();
        let augs = [
            BevTransform::IDENTITY,
            BevTransform { flip_y: true, ..BevTransform::IDENTITY },
            BevTransform { yaw: 0.3, scale: 1.04, ..BevTransform::IDENTITY },
        ];
        let out = tta_infer(&det, &scene, &augs, 0.1).unwrap();
        assert_eq!(out.len(), labels.len());
        for l in &labels {
            assert!(out.iter().any(|o| {
                (o.x - l.x).abs() < 1e-9 && (o.y - l.y).abs() < 1e-9 && (o.l - l.l).abs() < 1e-9 && o.class == l.class
            }));
        }
    }

    #[test]
    fn flip_pair_is_flip_invariant() {
        let (det, scene, _) = trained();
        let flip = BevTransform { flip_y: true, ..BevTransform::IDENTITY };
        let augs = [BevTransform::IDENTITY, flip];
        let direct = tta_infer(&det, &scene, &augs, 0.1).unwrap();
        let flipped = tta_infer(&det, &scene.transformed(&flip), &augs, 0.1).unwrap();
        assert_eq!(direct.len(), flipped.len());
        for b in &flipped {
            let back = flip.invert_box(b);
            assert!(direct.iter().any(|d| (d.x - back.x).abs() < 1e-9 && (d.y - back.y).abs() < 1e-9));
        }
    }

    #[test]
    fn scale_range_enforced() {
        assert!(validate_augmentations(&standard_augmentations(0.1, [0.95, 1.05])).is_ok());
        assert!(validate_augmentations(&[BevTransform { scale: 1.2, ..BevTransform::IDENTITY }]).is_err());
    }
}
