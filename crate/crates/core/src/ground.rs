//! Ground removal by seeded random-sample plane consensus.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundParams {
    /// Maximum point-to-plane distance for a ground inlier (meters).
    pub inlier_distance: f64,
    pub max_iterations: usize,
    /// Maximum angle between the plane normal and +z (degrees).
    pub max_tilt_deg: f64,
    /// Minimum inlier fraction for a plane to count as ground.
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            inlier_distance: 0.08,
            max_iterations: 200,
            max_tilt_deg: 15.0,
            min_inlier_fraction: 0.05,
            seed: 7,
        }
    }
}

/// Plane `n . p + d = 0` with unit normal pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point) -> f64 {
        (self.normal[0] * p.x + self.normal[1] * p.y + self.normal[2] * p.z + self.offset).abs()
    }

    fn through(a: &Point, b: &Point, c: &Point) -> Option<Plane> {
        let u = Vector3::new(b.x - a.x, b.y - a.y, b.z - a.z);
        let v = Vector3::new(c.x - a.x, c.y - a.y, c.z - a.z);
        let mut n = u.cross(&v);
        let norm = n.norm();
        if norm < 1e-9 {
            return None;
        }
        n /= norm;
        if n.z < 0.0 {
            n = -n;
        }
        Some(Plane { normal: [n.x, n.y, n.z], offset: -(n.x * a.x + n.y * a.y + n.z * a.z) })
    }

    /// Least-squares plane through `points` (smallest-eigenvalue normal).
    fn fit(points: &[&Point]) -> Option<Plane> {
        if points.len() < 3 {
            return None;
        }
        let n = points.len() as f64;
        let mut c = Vector3::zeros();
        for p in points {
            c += Vector3::new(p.x, p.y, p.z);
        }
        c /= n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = Vector3::new(p.x, p.y, p.z) - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        let mut normal: Vector3<f64> = eig.eigenvectors.column(k).into();
        if normal.z < 0.0 {
            normal = -normal;
        }
        Some(Plane { normal: [normal.x, normal.y, normal.z], offset: -normal.dot(&c) })
    }

    pub fn tilt_deg(&self) -> f64 {
        self.normal[2].clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSplit {
    pub nonground: PointCloud,
    pub ground: PointCloud,
    /// Indices into the input of the ground points.
    pub ground_indices: Vec<usize>,
    pub plane: Option<Plane>,
    /// Set when no near-horizontal plane was found; the input is returned unchanged.
    pub warning: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum GroundError {
    #[error("ground removal needs a non-empty cloud")]
    Empty,
}

fn inliers(points: &[Point], plane: &Plane, tol: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.distance(p) <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Split `cloud` into points off and on the dominant near-horizontal plane.
pub fn remove_ground(cloud: &PointCloud, params: &GroundParams) -> Result<GroundSplit, GroundError> {
    if cloud.is_empty() {
        return Err(GroundError::Empty);
    }
    let pts = &cloud.points;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Plane, usize)> = None;
    if pts.len() >= 3 {
        for _ in 0..params.max_iterations {
            let a = rng.random_range(0..pts.len());
            let b = rng.random_range(0..pts.len());
            let c = rng.random_range(0..pts.len());
            if a == b || b == c || a == c {
                continue;
            }
            let Some(plane) = Plane::through(&pts[a], &pts[b], &pts[c]) else {
                continue;
            };
            if plane.tilt_deg() > params.max_tilt_deg {
                continue;
            }
            let count = pts.iter().filter(|p| plane.distance(p) <= params.inlier_distance).count();
            if best.as_ref().is_none_or(|(_, n)| count > *n) {
                best = Some((plane, count));
            }
        }
    }
    let min_inliers = ((params.min_inlier_fraction * pts.len() as f64).ceil() as usize).max(3);
    let plane = match best {
        Some((plane, n)) if n >= min_inliers => plane,
        _ => {
            return Ok(GroundSplit {
                nonground: cloud.clone(),
                ground: PointCloud::new(Vec::new(), cloud.frame_id),
                ground_indices: Vec::new(),
                plane: None,
                warning: true,
            })
        }
    };
    // One least-squares refinement on the consensus set.
    let first = inliers(pts, &plane, params.inlier_distance);
    let refined = Plane::fit(&first.iter().map(|&i| &pts[i]).collect::<Vec<_>>())
        .filter(|p| p.tilt_deg() <= params.max_tilt_deg)
        .unwrap_or(plane);
    let ground_indices = inliers(pts, &refined, params.inlier_distance);
    let mut is_ground = vec![false; pts.len()];
    for &i in &ground_indices {
        is_ground[i] = true;
    }
    let nonground_idx: Vec<usize> = (0..pts.len()).filter(|&i| !is_ground[i]).collect();
    Ok(GroundSplit {
        nonground: cloud.select(&nonground_idx),
        ground: cloud.select(&ground_indices),
        ground_indices,
        plane: Some(refined),
        warning: false,
    })
}
