use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::VoxelMask;
use crate::geometry::{VoxelGrid, VoxelIndex};

/// Distance divisor for the range feature.
pub const DISTANCE_NORM: f64 = 100.0;

/// 26 neighbor visibility bits plus normalized range.
pub const FEATURE_LEN: usize = 27;

pub(crate) const NEIGHBOR_OFFSETS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut k = 0;
    let mut dx = -1;
    while dx <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dz = -1;
            while dz <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[k] = [dx, dy, dz];
                    k += 1;
                }
                dz += 1;
            }
            dy += 1;
        }
        dx += 1;
    }
    out
};

/// Per-voxel input: which of the 26 neighbors are occupied and visible, and
/// the cell-center range over [`DISTANCE_NORM`].
pub fn voxel_features(grid: &VoxelGrid, mask: &VoxelMask, v: &VoxelIndex) -> Vec<f64> {
    let mut f = Vec::with_capacity(FEATURE_LEN);
    for d in NEIGHBOR_OFFSETS {
        let on = v.offset(d, grid.extents).is_some_and(|n| mask.is_visible(&n));
        f.push(if on { 1.0 } else { 0.0 });
    }
    let c = grid.cell_center(v);
    f.push((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() / DISTANCE_NORM);
    f
}

/// Prediction domain with binary occupancy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTargets {
    pub domain: Vec<VoxelIndex>,
    pub targets: Vec<f64>,
}

impl OccupancyTargets {
    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&y| y > 0.5).count()
    }
}

/// Domain = every masked occupied voxel (target 1) plus an equal number of
/// empty voxels (target 0): half taken from the empty shell around occupied
/// space, half uniformly from the grid. At most `max_len` entries are kept.
pub fn build_targets(grid: &VoxelGrid, mask: &VoxelMask, seed: u64, max_len: usize) -> OccupancyTargets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives: Vec<VoxelIndex> = mask.masked.iter().copied().collect();
    if positives.len() * 2 > max_len {
        positives.shuffle(&mut rng);
        positives.truncate(max_len / 2);
        positives.sort();
    }
    let want = positives.len();

    let mut shell: BTreeSet<VoxelIndex> = BTreeSet::new();
    for v in grid.cells.keys() {
        for d in NEIGHBOR_OFFSETS {
            if let Some(n) = v.offset(d, grid.extents) {
                if !grid.is_occupied(&n) {
                    shell.insert(n);
                }
            }
        }
    }
    let mut shell: Vec<VoxelIndex> = shell.into_iter().collect();
    shell.shuffle(&mut rng);
    let mut negatives: BTreeSet<VoxelIndex> = shell.into_iter().take(want / 2).collect();

    let total = grid.total_cells();
    let free = total - grid.occupied_count();
    let target_neg = want.min(free);
    let mut attempts = 0usize;
    while negatives.len() < target_neg && attempts < 20 * want + 100 {
        attempts += 1;
        let v = VoxelIndex([
            rng.random_range(0..grid.extents[0]),
            rng.random_range(0..grid.extents[1]),
            rng.random_range(0..grid.extents[2]),
        ]);
        if !grid.is_occupied(&v) {
            negatives.insert(v);
        }
    }

    let mut domain = positives;
    let mut targets = vec![1.0; domain.len()];
    domain.extend(negatives);
    targets.resize(domain.len(), 0.0);
    OccupancyTargets { domain, targets }
}
