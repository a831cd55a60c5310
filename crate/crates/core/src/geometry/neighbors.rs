use std::collections::HashMap;

use super::point::Point;

/// Uniform hash grid for fixed-radius neighbor queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl NeighborIndex {
    /// `cell` should be close to the typical query radius.
    pub fn build(points: &[Point], cell: f64) -> Self {
        assert!(cell > 0.0, "neighbor cell size must be positive");
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(cell, p)).or_default().push(i as u32);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: &Point) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Visit every indexed point within `radius` (inclusive) of `center`.
    /// Visiting order is deterministic for a given index and query.
    pub fn for_each_within(&self, points: &[Point], center: &Point, radius: f64, mut f: impl FnMut(usize)) {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = Self::key(self.cell, center);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if points[j as usize].distance_sq(center) <= r2 {
                                f(j as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn within(&self, points: &[Point], center: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(points, center, radius, |j| out.push(j));
        out
    }

    pub fn count_within(&self, points: &[Point], center: &Point, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_within(points, center, radius, |_| n += 1);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..500)
            .map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let index = NeighborIndex::build(&pts, 0.4);
        for radius in [0.1, 0.4, 1.3] {
            for q in pts.iter().take(50) {
                let mut got = index.within(&pts, q, radius);
                got.sort_unstable();
                let want: Vec<usize> = (0..pts.len()).filter(|&j| pts[j].distance_sq(q) <= radius * radius).collect();
                assert_eq!(got, want);
            }
        }
    }
}
