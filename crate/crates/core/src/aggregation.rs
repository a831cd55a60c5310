//! Multi-sweep aggregation with persistence-based motion artifact removal.
//!
//! `2n + 1` sweeps are brought into the center sweep's sensor frame. Each
//! aggregated point gets a persistence score: the normalized entropy of how
//! its neighbors are spread over the sweeps. Static structure is re-observed
//! by every sweep and scores near 1; a moving actor only has neighbors from
//! the sweep that captured it and scores near 0.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::geometry::{NeighborIndex, Point, PointCloud};

#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("sequence needs an odd number of at least 3 sweeps, got {0}")]
    SweepCount(usize),
    #[error("pose of sweep {0} is not invertible")]
    SingularPose(usize),
    #[error("sweeps are not ordered by frame id at position {0}")]
    Unordered(usize),
    #[error("neighborhood radius must be positive, got {0}")]
    Radius(f64),
    #[error("persistence field has {got} scores for {expected} points")]
    Misaligned { expected: usize, got: usize },
}

/// Rigid sensor-to-world transform, row-major 4x4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose(pub [f64; 16]);

impl Pose {
    pub const IDENTITY: Pose = Pose([
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ]);

    pub fn from_xy_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose([
            c, -s, 0.0, x, //
            s, c, 0.0, y, //
            0.0, 0.0, 1.0, z, //
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.0)
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        Pose(out)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_matrix(&(self.matrix() * other.matrix()))
    }

    pub fn apply(&self, p: &Point) -> Point {
        let m = &self.0;
        Point {
            x: m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            y: m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            z: m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11],
            intensity: p.intensity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub cloud: PointCloud,
    pub pose: Pose,
}

/// `2n + 1` consecutive sweeps, the center one being the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSequence {
    pub sweeps: Vec<Sweep>,
}

impl SweepSequence {
    pub fn new(sweeps: Vec<Sweep>) -> Result<Self, AggregationError> {
        let seq = Self { sweeps };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        let n = self.sweeps.len();
        if n < 3 || n % 2 == 0 {
            return Err(AggregationError::SweepCount(n));
        }
        for k in 1..n {
            if self.sweeps[k].cloud.frame_id <= self.sweeps[k - 1].cloud.frame_id {
                return Err(AggregationError::Unordered(k));
            }
        }
        Ok(())
    }

    /// Context sweeps on each side of the center.
    pub fn context(&self) -> usize {
        self.sweeps.len() / 2
    }

    pub fn center_index(&self) -> usize {
        self.sweeps.len() / 2
    }

    pub fn center(&self) -> &Sweep {
        &self.sweeps[self.center_index()]
    }
}

/// Where an aggregated point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Position of the source sweep in the sequence.
    pub sweep: usize,
    /// Frame id of the source sweep.
    pub frame_id: u32,
    /// Index of the point within its sweep.
    pub index: usize,
}

/// All sweeps expressed in the center sweep's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCloud {
    pub cloud: PointCloud,
    pub provenance: Vec<Provenance>,
    pub center_sweep: usize,
    pub sweep_count: usize,
}

/// Per-point persistence in `[0, 1]`, aligned with an [`AggregatedCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceField {
    pub scores: Vec<f64>,
}

/// Output of [`filter_motion_artifacts`]: the surviving points and their
/// positions in the aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredCloud {
    pub cloud: PointCloud,
    pub kept: Vec<usize>,
}

pub fn aggregate_sweeps(seq: &SweepSequence) -> Result<AggregatedCloud, AggregationError> {
    seq.validate()?;
    let center = seq.center_index();
    let world_to_center = seq.sweeps[center]
        .pose
        .matrix()
        .try_inverse()
        .ok_or(AggregationError::SingularPose(center))?;
    let mut points = Vec::with_capacity(seq.sweeps.iter().map(|s| s.cloud.len()).sum());
    let mut provenance = Vec::with_capacity(points.capacity());
    for (k, sweep) in seq.sweeps.iter().enumerate() {
        let m = sweep.pose.matrix();
        if m.try_inverse().is_none() {
            return Err(AggregationError::SingularPose(k));
        }
        let to_center = if k == center {
            Pose::IDENTITY
        } else {
            Pose::from_matrix(&(world_to_center * m))
        };
        for (i, p) in sweep.cloud.points.iter().enumerate() {
            points.push(if k == center { *p } else { to_center.apply(p) });
            provenance.push(Provenance { sweep: k, frame_id: sweep.cloud.frame_id, index: i });
        }
    }
    Ok(AggregatedCloud {
        cloud: PointCloud::new(points, seq.sweeps[center].cloud.frame_id),
        provenance,
        center_sweep: center,
        sweep_count: seq.sweeps.len(),
    })
}

/// Normalized entropy of per-sweep neighbor counts.
pub fn persistence_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / total;
            -q * q.ln()
        })
        .sum();
    (h / (counts.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn persistence_scores_aggregated(
    agg: &AggregatedCloud,
    neighborhood_radius: f64,
) -> Result<PersistenceField, AggregationError> {
    if !(neighborhood_radius > 0.0) {
        return Err(AggregationError::Radius(neighborhood_radius));
    }
    let pts = &agg.cloud.points;
    let index = NeighborIndex::build(pts, neighborhood_radius);
    let mut counts = vec![0usize; agg.sweep_count];
    let scores = pts
        .iter()
        .map(|p| {
            counts.iter_mut().for_each(|c| *c = 0);
            index.for_each_within(pts, p, neighborhood_radius, |j| counts[agg.provenance[j].sweep] += 1);
            persistence_of_counts(&counts)
        })
        .collect();
    Ok(PersistenceField { scores })
}

/// Persistence score of every aggregated point of `seq`.
pub fn persistence_scores(seq: &SweepSequence, neighborhood_radius: f64) -> Result<PersistenceField, AggregationError> {
    if !(neighborhood_radius > 0.0) {
        return Err(AggregationError::Radius(neighborhood_radius));
    }
    let agg = aggregate_sweeps(seq)?;
    persistence_scores_aggregated(&agg, neighborhood_radius)
}

/// Keep every center-sweep point plus context points scoring at least `tau_static`.
pub fn filter_motion_artifacts(
    agg: &AggregatedCloud,
    field: &PersistenceField,
    tau_static: f64,
) -> Result<FilteredCloud, AggregationError> {
    if field.scores.len() != agg.cloud.len() {
        return Err(AggregationError::Misaligned { expected: agg.cloud.len(), got: field.scores.len() });
    }
    let kept: Vec<usize> = (0..agg.cloud.len())
        .filter(|&i| agg.provenance[i].sweep == agg.center_sweep || field.scores[i] >= tau_static)
        .collect();
    Ok(FilteredCloud { cloud: agg.cloud.select(&kept), kept })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cloud(frame: u32) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point::new(i as f64 * 0.2, j as f64 * 0.2, 0.0, 0.5));
            }
        }
        PointCloud::new(pts, frame)
    }

    fn static_seq(poses: [Pose; 3]) -> SweepSequence {
        SweepSequence::new(
            (0..3)
                .map(|k| {
                    // Points observed in each sensor frame are the world grid
                    // expressed in that frame.
                    let inv = Pose::from_matrix(&poses[k].matrix().try_inverse().unwrap());
                    let mut c = grid_cloud(k as u32);
                    c.points = c.points.iter().map(|p| inv.apply(p)).collect();
                    Sweep { cloud: c, pose: poses[k] }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_triples_point_count() {
        let seq = static_seq([Pose::IDENTITY; 3]);
        let agg = aggregate_sweeps(&seq).unwrap();
        assert_eq!(agg.cloud.len(), 300);
        assert_eq!(agg.provenance[150].sweep, 1);
    }

    #[test]
    fn translation_is_compensated() {
        let poses = [
            Pose::from_xy_yaw(-1.5, 0.2, 0.0, 0.0),
            Pose::from_xy_yaw(0.0, 0.0, 0.0, 0.0),
            Pose::from_xy_yaw(1.5, -0.2, 0.0, 0.0),
        ];
        let seq = static_seq(poses);
        let agg = aggregate_sweeps(&seq).unwrap();
        for (i, p) in agg.cloud.points.iter().enumerate() {
            let q = grid_cloud(0).points[i % 100];
            assert!(p.distance_sq(&q).sqrt() < 1e-6);
        }
    }

    #[test]
    fn rejects_even_or_short_sequences() {
        let one = vec![Sweep { cloud: grid_cloud(0), pose: Pose::IDENTITY }];
        assert!(matches!(SweepSequence::new(one), Err(AggregationError::SweepCount(1))));
        let two = vec![
            Sweep { cloud: grid_cloud(0), pose: Pose::IDENTITY },
            Sweep { cloud: grid_cloud(1), pose: Pose::IDENTITY },
        ];
        assert!(SweepSequence::new(two).is_err());
    }

    #[test]
    fn singular_pose_rejected() {
        let mut seq = static_seq([Pose::IDENTITY; 3]);
        seq.sweeps[0].pose = Pose([0.0; 16]);
        assert!(matches!(aggregate_sweeps(&seq), Err(AggregationError::SingularPose(0))));
    }

    #[test]
    fn entropy_extremes() {
        assert!((persistence_of_counts(&[4, 4, 4]) - 1.0).abs() < 1e-12);
        assert_eq!(persistence_of_counts(&[0, 7, 0]), 0.0);
        assert_eq!(persistence_of_counts(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn radius_must_be_positive() {
        let seq = static_seq([Pose::IDENTITY; 3]);
        assert!(matches!(persistence_scores(&seq, 0.0), Err(AggregationError::Radius(_))));
    }

    #[test]
    fn threshold_extremes() {
        let seq = static_seq([Pose::IDENTITY; 3]);
        let agg = aggregate_sweeps(&seq).unwrap();
        let field = persistence_scores_aggregated(&agg, 0.3).unwrap();
        let all = filter_motion_artifacts(&agg, &field, 0.0).unwrap();
        assert_eq!(all.cloud.len(), agg.cloud.len());
        let none = filter_motion_artifacts(&agg, &field, 1.0 + 1e-9).unwrap();
        assert_eq!(none.cloud.len(), 100);
        assert!(none.kept.iter().all(|&i| agg.provenance[i].sweep == 1));
    }
}
