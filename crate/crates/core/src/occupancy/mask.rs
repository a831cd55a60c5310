use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OccupancyError;
use crate::geometry::{Box3D, Point, PointCloud, VoxelGrid, VoxelIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSchedule {
    /// Weight for voxels inside a pseudo-label box.
    pub w_fr: f64,
    /// Weight for all other voxels.
    pub w_bg: f64,
    pub seed: u64,
}

impl Default for MaskSchedule {
    fn default() -> Self {
        Self { w_fr: 1.0, w_bg: 0.5, seed: 0 }
    }
}

impl MaskSchedule {
    pub fn validate(&self) -> Result<(), OccupancyError> {
        for (name, w) in [("w_fr", self.w_fr), ("w_bg", self.w_bg)] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(OccupancyError::Param(format!("{name} must be in (0, 1], got {w}")));
            }
        }
        Ok(())
    }
}

/// Occupied voxels split into hidden (`masked`) and visible (`unmasked`).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub masked: BTreeSet<VoxelIndex>,
    pub unmasked: BTreeSet<VoxelIndex>,
}

impl VoxelMask {
    pub fn is_masked(&self, v: &VoxelIndex) -> bool {
        self.masked.contains(v)
    }

    /// Occupied and left visible to the predictor.
    pub fn is_visible(&self, v: &VoxelIndex) -> bool {
        self.unmasked.contains(v)
    }

    /// `m_j` for an occupied voxel.
    pub fn bit(&self, v: &VoxelIndex) -> u8 {
        u8::from(self.is_masked(v))
    }
}

/// Mean of the member points of an occupied voxel.
pub fn voxel_centroid(grid: &VoxelGrid, cloud: &PointCloud, v: &VoxelIndex) -> Result<[f64; 3], OccupancyError> {
    let members = grid.members(v).filter(|m| !m.is_empty()).ok_or(OccupancyError::EmptyVoxel(*v))?;
    let mut c = [0.0; 3];
    for &i in members {
        let p = &cloud.points[i];
        c[0] += p.x;
        c[1] += p.y;
        c[2] += p.z;
    }
    let n = members.len() as f64;
    Ok([c[0] / n, c[1] / n, c[2] / n])
}

/// Distance from the sensor origin to the centroid of a voxel's points.
pub fn voxel_center_distance(grid: &VoxelGrid, cloud: &PointCloud, v: &VoxelIndex) -> Result<f64, OccupancyError> {
    let c = voxel_centroid(grid, cloud, v)?;
    Ok((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
}

/// `p = w * (0.1 + 0.5 * exp(-0.25 * floor(d / 10)))`, with `w` chosen by
/// whether the voxel is potential foreground.
pub fn mask_ratio(d: f64, is_foreground: bool, sched: &MaskSchedule) -> f64 {
    let w = if is_foreground { sched.w_fr } else { sched.w_bg };
    let band = (d.max(0.0) / 10.0).floor();
    w * (0.1 + 0.5 * (-0.25 * band).exp())
}

/// One Bernoulli draw per occupied voxel, in grid order. Deterministic in
/// `(grid, labels, sched.seed)`.
pub fn sample_mask(
    grid: &VoxelGrid,
    cloud: &PointCloud,
    labels: &[Box3D],
    sched: &MaskSchedule,
) -> Result<VoxelMask, OccupancyError> {
    sched.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut masked = BTreeSet::new();
    let mut unmasked = BTreeSet::new();
    for v in grid.cells.keys() {
        let c = voxel_centroid(grid, cloud, v)?;
        let d = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let centroid = Point::new(c[0], c[1], c[2], 0.0);
        let fg = labels.iter().any(|b| b.contains(&centroid));
        let p = mask_ratio(d, fg, sched);
        if rng.random::<f64>() < p {
            masked.insert(*v);
        } else {
            unmasked.insert(*v);
        }
    }
    Ok(VoxelMask { masked, unmasked })
}
