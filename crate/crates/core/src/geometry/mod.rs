//! Boxes, points, overlap measures, suppression and voxelization.
//!
//! Conventions: yaw is counter-clockwise about +z with 0 along +x and is kept
//! in `[-pi, pi)`. Voxel cells are lower-inclusive. Overlap of a degenerate
//! box (zero area or volume) is reported as 0 with a flag instead of an error.

mod bbox;
mod iou;
mod neighbors;
mod nms;
mod point;
mod voxel;

pub use bbox::{points_in_box, wrap_angle, Box3D, ObjectClass};
pub use iou::{bev_intersection_area, bev_overlap, iou_3d, iou_bev, volume_overlap, Overlap};
pub use neighbors::NeighborIndex;
pub use nms::{nms, nms_indices};
pub use point::{Point, PointCloud};
pub use voxel::{voxelize, VoxelGrid, VoxelIndex};

pub(crate) use iou::polygon_area;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("unknown object class `{0}`")]
    UnknownClass(String),
}
