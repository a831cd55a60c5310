//! Dense (motion-filtered, ground-removed) scenes and the similarity
//! transforms used for test-time augmentation.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Box3D, Point, PointCloud};

/// `p' = scale * Rz(yaw) * F(p)`, where `F` mirrors y when `flip_y` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevTransform {
    pub flip_y: bool,
    pub yaw: f64,
    pub scale: f64,
}

impl Default for BevTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl BevTransform {
    pub const IDENTITY: BevTransform = BevTransform { flip_y: false, yaw: 0.0, scale: 1.0 };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        let y = if self.flip_y { -p.y } else { p.y };
        let (s, c) = self.yaw.sin_cos();
        Point {
            x: self.scale * (c * p.x - s * y),
            y: self.scale * (s * p.x + c * y),
            z: self.scale * p.z,
            intensity: p.intensity,
        }
    }

    pub fn invert_point(&self, p: &Point) -> Point {
        let (s, c) = self.yaw.sin_cos();
        let x = p.x / self.scale;
        let y = p.y / self.scale;
        let ux = c * x + s * y;
        let uy = -s * x + c * y;
        Point { x: ux, y: if self.flip_y { -uy } else { uy }, z: p.z / self.scale, intensity: p.intensity }
    }

    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        let c = self.apply_point(&Point::new(b.x, b.y, b.z, 0.0));
        let heading = if self.flip_y { -b.yaw } else { b.yaw };
        Box3D {
            x: c.x,
            y: c.y,
            z: c.z,
            l: b.l * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
            yaw: wrap_angle(heading + self.yaw),
            ..*b
        }
    }

    pub fn invert_box(&self, b: &Box3D) -> Box3D {
        let c = self.invert_point(&Point::new(b.x, b.y, b.z, 0.0));
        let heading = b.yaw - self.yaw;
        Box3D {
            x: c.x,
            y: c.y,
            z: c.z,
            l: b.l / self.scale,
            w: b.w / self.scale,
            h: b.h / self.scale,
            yaw: wrap_angle(if self.flip_y { -heading } else { heading }),
            ..*b
        }
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &BevTransform) -> BevTransform {
        // s2 R2 F2 s1 R1 F1 = s2 s1 R(y2 +/- y1) F(f1 xor f2), since F R(a) = R(-a) F.
        let yaw1 = if self.flip_y { -first.yaw } else { first.yaw };
        BevTransform {
            flip_y: self.flip_y ^ first.flip_y,
            yaw: self.yaw + yaw1,
            scale: self.scale * first.scale,
        }
    }
}

/// A motion-filtered, ground-removed point cloud for one frame.
///
/// `view` records the transform applied since the cloud was built, so
/// consumers that hold boxes in the original frame can follow augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseScene {
    pub cloud: PointCloud,
    pub view: BevTransform,
}

impl DenseScene {
    pub fn new(cloud: PointCloud) -> Self {
        Self { cloud, view: BevTransform::IDENTITY }
    }

    pub fn frame_id(&self) -> u32 {
        self.cloud.frame_id
    }

    pub fn transformed(&self, t: &BevTransform) -> DenseScene {
        DenseScene {
            cloud: PointCloud::new(self.cloud.points.iter().map(|p| t.apply_point(p)).collect(), self.cloud.frame_id),
            view: t.after(&self.view),
        }
    }
}
