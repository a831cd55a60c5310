use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::point::{Point, PointCloud};
use super::GeometryError;

/// Integer cell coordinate `(i, j, k)` along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelIndex(pub [usize; 3]);

impl VoxelIndex {
    /// Neighbor offset by `(di, dj, dk)`, or `None` outside `extents`.
    pub fn offset(&self, d: [i64; 3], extents: [usize; 3]) -> Option<VoxelIndex> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = self.0[a] as i64 + d[a];
            if v < 0 || v >= extents[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(VoxelIndex(out))
    }
}

/// Axis-aligned grid over a scene. Only occupied cells are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: [f64; 3],
    pub cell_size: [f64; 3],
    pub extents: [usize; 3],
    /// Occupied cells with the indices of their member points.
    pub cells: BTreeMap<VoxelIndex, Vec<usize>>,
    /// Points that fell outside the grid.
    pub dropped: usize,
}

impl VoxelGrid {
    pub fn occupied_count(&self) -> usize {
        self.cells.len()
    }

    pub fn in_range_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_occupied(&self, v: &VoxelIndex) -> bool {
        self.cells.contains_key(v)
    }

    pub fn members(&self, v: &VoxelIndex) -> Option<&[usize]> {
        self.cells.get(v).map(Vec::as_slice)
    }

    pub fn total_cells(&self) -> usize {
        self.extents.iter().product()
    }

    /// Geometric center of a cell.
    pub fn cell_center(&self, v: &VoxelIndex) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + (v.0[a] as f64 + 0.5) * self.cell_size[a];
        }
        c
    }

    /// Cell containing `p` under the lower-inclusive convention.
    pub fn locate(&self, p: &Point) -> Option<VoxelIndex> {
        let xyz = p.xyz();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((xyz[a] - self.origin[a]) / self.cell_size[a]).floor();
            if f < 0.0 || f >= self.extents[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(VoxelIndex(idx))
    }
}

/// Bin every in-range point of `cloud` into its cell. Cells are half-open
/// `[lo, hi)` per axis, so a point on an interior boundary lands in the
/// higher-index cell.
pub fn voxelize(
    cloud: &PointCloud,
    origin: [f64; 3],
    cell_size: [f64; 3],
    extents: [usize; 3],
) -> Result<VoxelGrid, GeometryError> {
    if cell_size.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(GeometryError::InvalidGrid(format!("cell size {cell_size:?}")));
    }
    if extents.iter().any(|&e| e == 0) {
        return Err(GeometryError::InvalidGrid(format!("extents {extents:?}")));
    }
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(GeometryError::InvalidGrid(format!("origin {origin:?}")));
    }
    if let Some(index) = cloud.first_non_finite() {
        return Err(GeometryError::NonFinitePoint { index });
    }
    let mut grid = VoxelGrid {
        origin,
        cell_size,
        extents,
        cells: BTreeMap::new(),
        dropped: 0,
    };
    for (i, p) in cloud.points.iter().enumerate() {
        match grid.locate(p) {
            Some(v) => grid.cells.entry(v).or_default().push(i),
            None => grid.dropped += 1,
        }
    }
    Ok(grid)
}
