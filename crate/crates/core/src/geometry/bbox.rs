use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::point::Point;
use super::GeometryError;

/// Object category carried by a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Unknown,
}

impl ObjectClass {
    pub const KNOWN: [ObjectClass; 3] = [ObjectClass::Vehicle, ObjectClass::Pedestrian, ObjectClass::Cyclist];
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
        ObjectClass::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "Vehicle",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Unknown => "Unknown",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ObjectClass::Vehicle => 0,
            ObjectClass::Pedestrian => 1,
            ObjectClass::Cyclist => 2,
            ObjectClass::Unknown => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vehicle" | "car" => Ok(ObjectClass::Vehicle),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            "unknown" => Ok(ObjectClass::Unknown),
            _ => Err(GeometryError::UnknownClass(s.to_string())),
        }
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a - two_pi * ((a + PI) / two_pi).floor();
    if w >= PI {
        w -= two_pi;
    }
    if w < -PI {
        w += two_pi;
    }
    w
}

/// Oriented 3D box. `(x, y, z)` is the geometric center, `yaw` is measured
/// counter-clockwise about +z with 0 along +x, and `l` runs along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
    pub weight: f64,
}

impl Box3D {
    /// Builds a box with score 1 and weight 1, wrapping the yaw.
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64, class: ObjectClass) -> Self {
        Self {
            x: center[0],
            y: center[1],
            z: center[2],
            l: dims[0],
            w: dims[1],
            h: dims[2],
            yaw: wrap_angle(yaw),
            class,
            score: 1.0,
            weight: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    pub fn set_dims(&mut self, dims: [f64; 3]) {
        self.l = dims[0];
        self.w = dims[1];
        self.h = dims[2];
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn bev_range(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn z_min(&self) -> f64 {
        self.z - 0.5 * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.z + 0.5 * self.h
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [self.x, self.y, self.z, self.l, self.w, self.h, self.yaw, self.score, self.weight];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite field".into()));
        }
        if self.l <= 0.0 || self.w <= 0.0 || self.h <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "non-positive dims ({}, {}, {})",
                self.l, self.w, self.h
            )));
        }
        if !(-PI..PI).contains(&self.yaw) {
            return Err(GeometryError::InvalidBox(format!("yaw {} outside [-pi, pi)", self.yaw)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidBox(format!("score {} outside [0, 1]", self.score)));
        }
        if self.weight < 0.0 {
            return Err(GeometryError::InvalidBox(format!("negative weight {}", self.weight)));
        }
        Ok(())
    }

    /// Express a world point in the box frame (origin at center, x along heading).
    pub fn to_local(&self, p: &Point) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        [c * dx + s * dy, -s * dx + c * dy, p.z - self.z]
    }

    pub fn contains(&self, p: &Point) -> bool {
        let [u, v, w] = self.to_local(p);
        u.abs() <= 0.5 * self.l && v.abs() <= 0.5 * self.w && w.abs() <= 0.5 * self.h
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        let mut out = [[0.0; 2]; 4];
        for (k, [u, v]) in local.iter().enumerate() {
            out[k] = [self.x + c * u - s * v, self.y + s * u + c * v];
        }
        out
    }
}

/// Indices of the cloud points inside `b` (closed faces).
pub fn points_in_box(points: &[Point], b: &Box3D) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| b.contains(p))
        .map(|(i, _)| i)
        .collect()
}
