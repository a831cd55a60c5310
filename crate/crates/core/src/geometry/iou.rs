use super::bbox::Box3D;

/// Areas or volumes below this are treated as degenerate.
const DEGENERATE_EPS: f64 = 1e-12;

/// IoU together with a flag set when either input had (near-)zero extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub iou: f64,
    pub degenerate: bool,
}

impl Overlap {
    const DEGENERATE: Overlap = Overlap { iou: 0.0, degenerate: true };
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub(crate) fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc.abs()
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    // Intersection of segment p->q with the infinite line a->b.
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman clipping of `subject` by the convex counter-clockwise `clip`.
pub(crate) fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

/// Canonical ordering so that the clip computation is bit-for-bit symmetric.
fn ordered<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    let ka = [a.x, a.y, a.z, a.l, a.w, a.h, a.yaw];
    let kb = [b.x, b.y, b.z, b.l, b.w, b.h, b.yaw];
    match ka.partial_cmp(&kb) {
        Some(std::cmp::Ordering::Greater) => (b, a),
        _ => (a, b),
    }
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = ordered(a, b);
    // Early out on circumscribed circles.
    let ra = 0.5 * (a.l * a.l + a.w * a.w).sqrt();
    let rb = 0.5 * (b.l * b.l + b.w * b.w).sqrt();
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()))
}

fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0)
}

pub fn bev_overlap(a: &Box3D, b: &Box3D) -> Overlap {
    let area_a = a.bev_area();
    let area_b = b.bev_area();
    if !(area_a > DEGENERATE_EPS && area_b > DEGENERATE_EPS) {
        return Overlap::DEGENERATE;
    }
    let inter = bev_intersection_area(a, b);
    let union = area_a + area_b - inter;
    Overlap { iou: (inter / union).clamp(0.0, 1.0), degenerate: false }
}

pub fn volume_overlap(a: &Box3D, b: &Box3D) -> Overlap {
    let vol_a = a.volume();
    let vol_b = b.volume();
    if !(vol_a > DEGENERATE_EPS && vol_b > DEGENERATE_EPS) {
        return Overlap::DEGENERATE;
    }
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return Overlap { iou: 0.0, degenerate: false };
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = vol_a + vol_b - inter;
    Overlap { iou: (inter / union).clamp(0.0, 1.0), degenerate: false }
}

/// Bird's-eye-view IoU of the rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    bev_overlap(a, b).iou
}

/// Volumetric IoU: footprint intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    volume_overlap(a, b).iou
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ObjectClass;

    fn bx(x: f64, y: f64, l: f64, w: f64, yaw: f64) -> Box3D {
        Box3D::new([x, y, 1.0], [l, w, 2.0], yaw, ObjectClass::Vehicle)
    }

    #[test]
    fn identical_is_one() {
        let a = bx(3.0, -1.0, 4.0, 2.0, 0.4);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        let a = bx(0.0, 0.0, 4.0, 2.0, 0.0);
        let b = bx(10.0, 0.0, 4.0, 2.0, 1.0);
        assert_eq!(iou_bev(&a, &b), 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn half_shift_axis_aligned() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        // intersection 2, union 6
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_in_square() {
        // Unit square rotated 45 deg inside a 2x2 square: intersection = 1.
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4);
        assert!((iou_bev(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_flagged() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let o = bev_overlap(&a, &b);
        assert_eq!(o.iou, 0.0);
        assert!(o.degenerate);
        assert!(volume_overlap(&b, &a).degenerate);
    }

    #[test]
    fn vertical_offset_reduces_3d_only() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let mut b = a;
        b.z += 1.0;
        assert!((iou_bev(&a, &b) - 1.0).abs() < 1e-12);
        // overlap height 1 of 2: inter 4, union 16 - 4 = 12
        assert!((iou_3d(&a, &b) - 4.0 / 12.0).abs() < 1e-12);
    }
}
