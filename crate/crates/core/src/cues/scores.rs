use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CueError;
use crate::geometry::{points_in_box, Box3D, ObjectClass, Point};

/// Cap on the size divergence before normalization.
pub const CONSISTENCY_CAP: f64 = 0.05;

/// Per-class prototype sizes `(l, w, h)` in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizePrototypes {
    pub sizes: BTreeMap<ObjectClass, [f64; 3]>,
}

impl Default for SizePrototypes {
    fn default() -> Self {
        Self {
            sizes: BTreeMap::from([
                (ObjectClass::Vehicle, [4.7, 1.9, 1.7]),
                (ObjectClass::Pedestrian, [0.8, 0.8, 1.7]),
                (ObjectClass::Cyclist, [1.8, 0.7, 1.7]),
            ]),
        }
    }
}

impl SizePrototypes {
    pub fn get(&self, class: ObjectClass) -> Result<[f64; 3], CueError> {
        self.sizes.get(&class).copied().ok_or(CueError::MissingPrototype(class))
    }

    pub fn validate(&self) -> Result<(), CueError> {
        for class in ObjectClass::KNOWN {
            let s = self.get(class)?;
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(CueError::Param(format!("prototype for {class} must be positive, got {s:?}")));
            }
        }
        Ok(())
    }

    /// Known class whose prototype has the smallest normalized divergence
    /// from `dims`; ties go to the earlier class.
    pub fn nearest(&self, dims: [f64; 3]) -> Option<(ObjectClass, [f64; 3])> {
        let mut best: Option<(f64, ObjectClass, [f64; 3])> = None;
        for (&class, &proto) in &self.sizes {
            if class == ObjectClass::Unknown {
                continue;
            }
            let d = size_divergence(proto, dims, false);
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, class, proto));
            }
        }
        best.map(|(_, c, p)| (c, p))
    }
}

/// `sum_k S_k ln(S_k / s_k)` for prototype `S` and box size `s`. Unless
/// `raw` is set both triplets are first scaled to sum 1.
pub fn size_divergence(prototype: [f64; 3], size: [f64; 3], raw: bool) -> f64 {
    let (ps, ss) = if raw {
        (1.0, 1.0)
    } else {
        (prototype.iter().sum::<f64>(), size.iter().sum::<f64>())
    };
    (0..3)
        .map(|k| {
            let p = prototype[k] / ps;
            let s = size[k] / ss;
            p * (p / s).ln()
        })
        .sum()
}

/// Size-divergence score in `[0, 1]`: 0 for a perfect match, 1 once the
/// divergence reaches [`CONSISTENCY_CAP`].
pub fn consistency_score(size: [f64; 3], prototype: [f64; 3], raw: bool) -> f64 {
    let sum = size_divergence(prototype, size, raw).max(0.0);
    sum.min(CONSISTENCY_CAP) / CONSISTENCY_CAP
}

/// Consistency of a box against its class prototype. Unknown-class boxes
/// are scored against the nearest prototype. Returns the score and the
/// class it was computed for.
pub fn box_consistency(b: &Box3D, prototypes: &SizePrototypes, raw: bool) -> Result<(f64, ObjectClass), CueError> {
    let dims = b.dims();
    if dims.iter().any(|v| !(*v > 0.0)) {
        return Err(CueError::Param(format!("box sizes must be positive, got {dims:?}")));
    }
    let (class, proto) = if b.class == ObjectClass::Unknown {
        prototypes.nearest(dims).ok_or(CueError::MissingPrototype(ObjectClass::Unknown))?
    } else {
        (b.class, prototypes.get(b.class)?)
    };
    Ok((consistency_score(dims, proto, raw), class))
}

/// Number of points in the box and their mean intensity; `(0, 0)` if empty.
pub fn instance_attributes(points: &[Point], b: &Box3D) -> (usize, f64) {
    let inside = points_in_box(points, b);
    if inside.is_empty() {
        return (0, 0.0);
    }
    let sum: f64 = inside.iter().map(|&i| points[i].intensity).sum();
    (inside.len(), sum / inside.len() as f64)
}

/// Occupied cells of the `r x r` grid tiled over the box footprint, counting
/// only points inside the box.
pub fn footprint_occupancy(points: &[Point], b: &Box3D, r: usize) -> usize {
    let mut occ = vec![false; r * r];
    for i in points_in_box(points, b) {
        let [u, v, _] = b.to_local(&points[i]);
        let cu = (((u + 0.5 * b.l) / b.l * r as f64).floor().max(0.0) as usize).min(r - 1);
        let cv = (((v + 0.5 * b.w) / b.w * r as f64).floor().max(0.0) as usize).min(r - 1);
        occ[cu * r + cv] = true;
    }
    occ.iter().filter(|&&o| o).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    pub score: f64,
    pub occupied_cells: usize,
}

/// `[1 - N(|c|)] + N_j / r^2` with `N` a linear normalization of the center
/// range by `norm_range`, clamped to `[0, 1]`.
pub fn distribution_score(b: &Box3D, points: &[Point], r: usize, norm_range: f64) -> Result<Distribution, CueError> {
    if r == 0 {
        return Err(CueError::Param("resolution must be >= 1".into()));
    }
    if !(norm_range > 0.0) {
        return Err(CueError::Param("norm_range must be > 0".into()));
    }
    let n = (b.range() / norm_range).clamp(0.0, 1.0);
    let occupied = footprint_occupancy(points, b, r);
    Ok(Distribution { score: (1.0 - n) + occupied as f64 / (r * r) as f64, occupied_cells: occupied })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vehicle(dims: [f64; 3]) -> Box3D {
        Box3D::new([10.0, 0.0, 0.8], dims, 0.3, ObjectClass::Vehicle)
    }

    #[test]
    fn prototype_scores_zero() {
        let p = SizePrototypes::default();
        for class in ObjectClass::KNOWN {
            let d = p.get(class).unwrap();
            let b = Box3D::new([0.0; 3], d, 0.0, class);
            assert_eq!(box_consistency(&b, &p, false).unwrap().0, 0.0);
            assert_eq!(box_consistency(&b, &p, true).unwrap().0, 0.0);
        }
    }

    #[test]
    fn pedestrian_size_against_vehicle_saturates() {
        let p = SizePrototypes::default();
        let (s, class) = box_consistency(&vehicle([0.8, 0.8, 1.7]), &p, false).unwrap();
        assert_eq!(class, ObjectClass::Vehicle);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn scale_invariance_of_normalized_form() {
        let p = SizePrototypes::default();
        let s = box_consistency(&vehicle([4.7 * 1.5, 1.9 * 1.5, 1.7 * 1.5]), &p, false).unwrap().0;
        assert!(s.abs() < 1e-12);
        let raw = box_consistency(&vehicle([4.7 * 1.5, 1.9 * 1.5, 1.7 * 1.5]), &p, true).unwrap().0;
        assert_eq!(raw, 0.0, "negative raw sums clamp to zero");
    }

    #[test]
    fn unknown_uses_nearest_and_missing_is_error() {
        let p = SizePrototypes::default();
        let b = Box3D::new([0.0; 3], [1.8, 0.7, 1.7], 0.0, ObjectClass::Unknown);
        assert_eq!(box_consistency(&b, &p, false).unwrap(), (0.0, ObjectClass::Cyclist));
        let mut partial = p.clone();
        partial.sizes.remove(&ObjectClass::Cyclist);
        let c = Box3D::new([0.0; 3], [1.8, 0.7, 1.7], 0.0, ObjectClass::Cyclist);
        match box_consistency(&c, &partial, false) {
            Err(e @ CueError::MissingPrototype(ObjectClass::Cyclist)) => assert!(e.to_string().contains("Cyclist")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn attributes() {
        let b = Box3D::new([0.0, 0.0, 0.0], [2.0, 2.0, 2.0], 0.0, ObjectClass::Unknown);
        let mut pts: Vec<Point> = (0..7).map(|i| Point::new(0.1 * i as f64 - 0.3, 0.0, 0.0, 0.5)).collect();
        pts.push(Point::new(5.0, 0.0, 0.0, 1.0));
        assert_eq!(instance_attributes(&pts, &b), (7, 0.5));
        assert_eq!(instance_attributes(&pts[7..], &b), (0, 0.0));
    }

    #[test]
    fn distribution_examples() {
        // Full grid at the origin.
        let b = Box3D::new([0.0, 0.0, 0.0], [4.0, 4.0, 1.0], 0.0, ObjectClass::Unknown);
        let pts: Vec<Point> = (0..16).map(|k| Point::new(-1.5 + (k / 4) as f64, -1.5 + (k % 4) as f64, 0.0, 0.0)).collect();
        let d = distribution_score(&b, &pts, 4, 75.0).unwrap();
        assert_eq!(d.occupied_cells, 16);
        assert_eq!(d.score, 2.0);
        // Empty box at the normalization range.
        let far = Box3D::new([75.0, 0.0, 0.0], [4.0, 4.0, 1.0], 0.0, ObjectClass::Unknown);
        assert_eq!(distribution_score(&far, &[], 4, 75.0).unwrap().score, 0.0);
        // r = 4, 8 occupied cells, half range.
        let mid = Box3D::new([37.5, 0.0, 0.0], [4.0, 4.0, 1.0], 0.0, ObjectClass::Unknown);
        let half: Vec<Point> = pts.iter().take(8).map(|p| Point::new(p.x + 37.5, p.y, 0.0, 0.0)).collect();
        let d = distribution_score(&mid, &half, 4, 75.0).unwrap();
        assert_eq!(d.occupied_cells, 8);
        assert!((d.score - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_quarter_turn_invariance() {
        let b = Box3D::new([12.0, 3.0, 0.5], [4.0, 2.0, 1.5], 0.0, ObjectClass::Unknown);
        let pts: Vec<Point> = (0..40)
            .map(|k| Point::new(10.37 + 0.093 * k as f64, 2.21 + 0.0371 * k as f64, 0.3, 0.0))
            .collect();
        let base = distribution_score(&b, &pts, 8, 75.0).unwrap();
        let rb = Box3D::new([-3.0, 12.0, 0.5], [4.0, 2.0, 1.5], std::f64::consts::FRAC_PI_2, ObjectClass::Unknown);
        let rp: Vec<Point> = pts.iter().map(|p| Point::new(-p.y, p.x, p.z, 0.0)).collect();
        let rot = distribution_score(&rb, &rp, 8, 75.0).unwrap();
        assert_eq!(base.occupied_cells, rot.occupied_cells);
        assert!((base.score - rot.score).abs() < 1e-12);
    }
}
