//! Initial pseudo-labels: density clustering with a per-point radius that
//! widens where the cloud is sparse, minimum-area box fitting, and NMS.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{nms, Box3D, NeighborIndex, ObjectClass, Point, PointCloud};
use crate::scene::DenseScene;

/// Smallest extent assigned to a fitted box along any axis (meters).
pub const MIN_BOX_EXTENT: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum ClusteringError {
    #[error("invalid clustering parameter: {0}")]
    Param(String),
    #[error("box fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringParams {
    /// Scaling factor applied to the whole radius.
    pub alpha: f64,
    /// Density-sensitive factor; 0 gives a fixed radius `alpha * r0`.
    pub beta: f64,
    /// Initial radius (meters).
    pub r0: f64,
    pub min_points: usize,
    /// Neighbor count (within `r0 / 2`) that maps to density 1.
    pub density_reference: f64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.6, r0: 0.6, min_points: 5, density_reference: 10.0 }
    }
}

impl ClusteringParams {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        if !(self.alpha > 0.0) {
            return Err(ClusteringError::Param(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) {
            return Err(ClusteringError::Param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.r0 > 0.0) {
            return Err(ClusteringError::Param(format!("r0 must be > 0, got {}", self.r0)));
        }
        if self.min_points < 1 {
            return Err(ClusteringError::Param("min_points must be >= 1".into()));
        }
        if !(self.density_reference > 0.0) {
            return Err(ClusteringError::Param("density_reference must be > 0".into()));
        }
        Ok(())
    }

    /// Radius at which local density is probed.
    pub fn probe_radius(&self) -> f64 {
        0.5 * self.r0
    }

    /// Largest radius `dynamic_radius` can return (at zero density).
    pub fn max_radius(&self) -> f64 {
        self.alpha * (1.0 + self.beta) * self.r0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub centroid: [f64; 3],
}

/// Neighbors of `points[index]` within `probe_radius` (self excluded), over `reference`.
pub fn density_at(points: &[Point], index: usize, probe_radius: f64, reference: f64) -> f64 {
    let p = &points[index];
    let r2 = probe_radius * probe_radius;
    let n = points
        .iter()
        .enumerate()
        .filter(|(j, q)| *j != index && q.distance_sq(p) <= r2)
        .count();
    n as f64 / reference
}

fn density_indexed(points: &[Point], index: &NeighborIndex, i: usize, probe_radius: f64, reference: f64) -> f64 {
    let n = index.count_within(points, &points[i], probe_radius);
    // The query point itself is always within range.
    (n - 1) as f64 / reference
}

/// `r = alpha * (1 + beta * exp(-rho)) * r0`.
pub fn dynamic_radius(params: &ClusteringParams, rho: f64) -> f64 {
    params.alpha * (1.0 + params.beta * (-rho).exp()) * params.r0
}

/// Per-point cluster label (`None` for noise) from density clustering where
/// each point's neighborhood radius is `dynamic_radius(density_at(point))`.
///
/// Points are visited in input order and clusters are numbered in creation
/// order; a border point belongs to the first cluster that reaches it.
pub fn cluster_labels(cloud: &PointCloud, params: &ClusteringParams) -> Result<Vec<Option<usize>>, ClusteringError> {
    params.validate()?;
    let pts = &cloud.points;
    let n = pts.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let probe = params.probe_radius();
    let max_r = params.max_radius();
    let index = NeighborIndex::build(pts, max_r.max(probe));
    let radii: Vec<f64> = (0..n)
        .map(|i| dynamic_radius(params, density_indexed(pts, &index, i, probe, params.density_reference)))
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_id = 0usize;
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut neighbors = Vec::new();
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        neighbors.clear();
        index.for_each_within(pts, &pts[i], radii[i], |j| neighbors.push(j));
        if neighbors.len() < params.min_points {
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[i] = Some(id);
        queue.clear();
        queue.extend(neighbors.iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q].is_none() {
                labels[q] = Some(id);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            neighbors.clear();
            index.for_each_within(pts, &pts[q], radii[q], |j| neighbors.push(j));
            if neighbors.len() >= params.min_points {
                queue.extend(neighbors.iter().copied());
            }
        }
    }
    Ok(labels)
}

/// Clusters with at least `min_points` members, in creation order.
pub fn cluster(cloud: &PointCloud, params: &ClusteringParams) -> Result<Vec<Cluster>, ClusteringError> {
    let labels = cluster_labels(cloud, params)?;
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            members[*l].push(i);
        }
    }
    Ok(members
        .into_iter()
        .filter(|m| m.len() >= params.min_points)
        .map(|m| {
            let mut c = [0.0; 3];
            for &i in &m {
                let p = &cloud.points[i];
                c[0] += p.x;
                c[1] += p.y;
                c[2] += p.z;
            }
            let k = m.len() as f64;
            Cluster { members: m, centroid: [c[0] / k, c[1] / k, c[2] / k] }
        })
        .collect())
}

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a point set: `(center, l, w, yaw)`
/// with `l >= w` and yaw in `[-pi/2, pi/2)`. `None` for collinear input.
pub fn min_area_rect(points: &[[f64; 2]]) -> Option<([f64; 2], f64, f64, f64)> {
    let hull = convex_hull(points);
    if hull.len() < 3 || crate::geometry::polygon_area(&hull) < 1e-12 {
        return None;
    }
    let mut best: Option<(f64, [f64; 2], f64, f64, f64)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
        let (s, c) = theta.sin_cos();
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let u = c * p[0] + s * p[1];
            let v = -s * p[0] + c * p[1];
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.is_none_or(|bst| area < bst.0) {
            let uc = 0.5 * (umin + umax);
            let vc = 0.5 * (vmin + vmax);
            let center = [c * uc - s * vc, s * uc + c * vc];
            best = Some((area, center, umax - umin, vmax - vmin, theta));
        }
    }
    let (_, center, mut l, mut w, mut yaw) = best?;
    if l < w {
        std::mem::swap(&mut l, &mut w);
        yaw += FRAC_PI_2;
    }
    Some((center, l, w, canonical_half_turn(yaw)))
}

/// Reduce an undirected heading to `[-pi/2, pi/2)`.
pub fn canonical_half_turn(yaw: f64) -> f64 {
    let mut y = yaw - PI * ((yaw + FRAC_PI_2) / PI).floor();
    if y >= FRAC_PI_2 {
        y -= PI;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedBox {
    pub bbox: Box3D,
    /// Set when the footprint was collinear and an axis-aligned box was used.
    pub degenerate: bool,
}

/// Fit an oriented box to the points of `cluster`.
pub fn fit_box(cloud: &PointCloud, cluster: &Cluster, score_reference: f64) -> Result<FittedBox, ClusteringError> {
    let n = cluster.members.len();
    if n < 3 {
        return Err(ClusteringError::TooFewPoints(n));
    }
    let pts: Vec<&Point> = cluster.members.iter().map(|&i| &cloud.points[i]).collect();
    let (zmin, zmax) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let h = (zmax - zmin).max(MIN_BOX_EXTENT);
    let zc = 0.5 * (zmin + zmax);
    let bev: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
    let score = (n as f64 / score_reference).clamp(0.0, 1.0);

    let (center, l, w, yaw, degenerate) = match min_area_rect(&bev) {
        Some((c, l, w, yaw)) => (c, l.max(MIN_BOX_EXTENT), w.max(MIN_BOX_EXTENT), yaw, false),
        None => {
            let (xmin, xmax, ymin, ymax) = bev.iter().fold((f64::MAX, f64::MIN, f64::MAX, f64::MIN), |acc, p| {
                (acc.0.min(p[0]), acc.1.max(p[0]), acc.2.min(p[1]), acc.3.max(p[1]))
            });
            let c = [0.5 * (xmin + xmax), 0.5 * (ymin + ymax)];
            let (dx, dy) = ((xmax - xmin).max(MIN_BOX_EXTENT), (ymax - ymin).max(MIN_BOX_EXTENT));
            if dx >= dy {
                (c, dx, dy, 0.0, true)
            } else {
                (c, dy, dx, -FRAC_PI_2, true)
            }
        }
    };
    let mut b = Box3D::new([center[0], center[1], zc], [l, w, h], yaw, ObjectClass::Unknown).with_score(score);
    b.yaw = canonical_half_turn(b.yaw);
    Ok(FittedBox { bbox: b, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelParams {
    pub clustering: ClusteringParams,
    /// Cluster size that maps to score 1.
    pub score_reference: f64,
    /// BEV IoU above which the lower-scored box is suppressed.
    pub nms_iou: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self { clustering: ClusteringParams::default(), score_reference: 50.0, nms_iou: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialLabels {
    pub boxes: Vec<Box3D>,
    pub clusters: usize,
    pub degenerate_fits: usize,
}

/// cluster -> fit_box -> nms over a ground-removed scene.
pub fn initial_labels(scene: &DenseScene, params: &LabelParams) -> Result<InitialLabels, ClusteringError> {
    if scene.cloud.is_empty() {
        params.clustering.validate()?;
        return Ok(InitialLabels { boxes: Vec::new(), clusters: 0, degenerate_fits: 0 });
    }
    let clusters = cluster(&scene.cloud, &params.clustering)?;
    let mut fitted = Vec::with_capacity(clusters.len());
    let mut degenerate = 0;
    for c in clusters.iter().filter(|c| c.members.len() >= 3) {
        let f = fit_box(&scene.cloud, c, params.score_reference)?;
        degenerate += usize::from(f.degenerate);
        fitted.push(f.bbox);
    }
    Ok(InitialLabels { boxes: nms(&fitted, params.nms_iou), clusters: clusters.len(), degenerate_fits: degenerate })
}
