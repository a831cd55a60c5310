use serde::{Deserialize, Serialize};

use crate::geometry::{iou_bev, Box3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Minimum BEV IoU for an overlap match.
    pub iou_min: f64,
    /// Fallback gate on predicted-center distance (meters).
    pub center_gate: f64,
    /// Frames a track may go unobserved before it is closed.
    pub max_misses: usize,
    /// Seconds between consecutive frames.
    pub frame_dt: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { iou_min: 0.1, center_gate: 2.0, max_misses: 2, frame_dt: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub box_index: usize,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub observations: Vec<Observation>,
    /// BEV velocity (m/s).
    pub velocity: [f64; 2],
}

impl Track {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn last(&self) -> &Observation {
        self.observations.last().expect("tracks are never empty")
    }

    /// Last box advanced by the current velocity to `frame`.
    pub fn predict(&self, frame: usize, dt: f64) -> Box3D {
        let last = self.last();
        let t = (frame - last.frame) as f64 * dt;
        let mut b = last.bbox;
        b.x += self.velocity[0] * t;
        b.y += self.velocity[1] * t;
        b
    }
}

/// Least-squares slope of the observed BEV centers against time.
pub fn ls_velocity(observations: &[Observation], dt: f64) -> [f64; 2] {
    if observations.len() < 2 {
        return [0.0, 0.0];
    }
    let n = observations.len() as f64;
    let tm = observations.iter().map(|o| o.frame as f64 * dt).sum::<f64>() / n;
    let xm = observations.iter().map(|o| o.bbox.x).sum::<f64>() / n;
    let ym = observations.iter().map(|o| o.bbox.y).sum::<f64>() / n;
    let (mut sxx, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for o in observations {
        let dt_i = o.frame as f64 * dt - tm;
        sxx += dt_i * dt_i;
        sx += dt_i * (o.bbox.x - xm);
        sy += dt_i * (o.bbox.y - ym);
    }
    if sxx == 0.0 {
        return [0.0, 0.0];
    }
    [sx / sxx, sy / sxx]
}

/// Class-agnostic greedy tracking over an ordered sequence of per-frame box
/// sets. Pairs are ranked by BEV IoU against the constant-velocity
/// prediction, then by predicted-center distance; pairs with no overlap are
/// admitted only inside `center_gate`.
pub fn track(frames: &[Vec<Box3D>], cfg: &TrackerConfig) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    for (f, dets) in frames.iter().enumerate() {
        let active: Vec<usize> = (0..tracks.len())
            .filter(|&t| f - tracks[t].last().frame <= cfg.max_misses + 1)
            .collect();
        let mut pairs: Vec<(f64, f64, usize, usize)> = Vec::new();
        for &t in &active {
            let pred = tracks[t].predict(f, cfg.frame_dt);
            for (d, det) in dets.iter().enumerate() {
                let iou = iou_bev(&pred, det);
                let dist = (pred.x - det.x).hypot(pred.y - det.y);
                if (iou > 0.0 && iou >= cfg.iou_min) || dist <= cfg.center_gate {
                    pairs.push((iou, dist, t, d));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut track_used = vec![false; tracks.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, _, t, d) in pairs {
            if track_used[t] || det_used[d] {
                continue;
            }
            track_used[t] = true;
            det_used[d] = true;
            let tr = &mut tracks[t];
            tr.observations.push(Observation { frame: f, box_index: d, bbox: dets[d] });
            tr.velocity = ls_velocity(&tr.observations, cfg.frame_dt);
        }
        for (d, det) in dets.iter().enumerate() {
            if !det_used[d] {
                tracks.push(Track {
                    id: tracks.len(),
                    observations: vec![Observation { frame: f, box_index: d, bbox: *det }],
                    velocity: [0.0, 0.0],
                });
            }
        }
    }
    tracks
}
