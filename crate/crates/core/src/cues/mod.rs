//! Instance cues for pseudo-labels: class-agnostic tracking, motion,
//! per-box point attributes, and the distribution and consistency scores.

mod scores;
mod track;

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use scores::{
    box_consistency, consistency_score, distribution_score, footprint_occupancy, instance_attributes,
    size_divergence, Distribution, SizePrototypes, CONSISTENCY_CAP,
};
pub use track::{ls_velocity, track, Observation, Track, TrackerConfig};

use crate::geometry::{Box3D, ObjectClass};
use crate::scene::DenseScene;

#[derive(Debug, thiserror::Error)]
pub enum CueError {
    #[error("no size prototype for class {0}")]
    MissingPrototype(ObjectClass),
    #[error("invalid cue parameter: {0}")]
    Param(String),
    #[error("{0} label sets for {1} scenes")]
    Misaligned(usize, usize),
    #[error("cue record line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CueConfig {
    /// BEV grid resolution per box footprint.
    pub resolution: usize,
    /// Range mapped to 1 by the distance normalization (meters).
    pub norm_range: f64,
    /// Evaluate the size divergence on raw meters instead of normalized triplets.
    pub raw_sizes: bool,
    /// Speed above which an instance is flagged dynamic (m/s).
    pub dynamic_speed: f64,
    pub tracker: TrackerConfig,
}

impl Default for CueConfig {
    fn default() -> Self {
        Self {
            resolution: 8,
            norm_range: 75.0,
            raw_sizes: false,
            dynamic_speed: 0.5,
            tracker: TrackerConfig::default(),
        }
    }
}

impl CueConfig {
    pub fn validate(&self) -> Result<(), CueError> {
        if self.resolution == 0 {
            return Err(CueError::Param("resolution must be >= 1".into()));
        }
        if !(self.norm_range > 0.0) {
            return Err(CueError::Param("norm_range must be > 0".into()));
        }
        if !(self.tracker.frame_dt > 0.0) {
            return Err(CueError::Param("tracker.frame_dt must be > 0".into()));
        }
        Ok(())
    }
}

/// All cues for one pseudo-label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueRecord {
    pub frame_id: u32,
    pub box_index: usize,
    pub track_id: usize,
    pub bbox: Box3D,
    pub point_count: usize,
    pub mean_intensity: f64,
    pub velocity: [f64; 2],
    pub speed: f64,
    pub dynamic: bool,
    /// Range of the box center from the sensor (meters).
    pub distance: f64,
    pub s_dis: f64,
    pub s_cons: f64,
    /// Class whose prototype `s_cons` was computed against.
    pub prototype_class: ObjectClass,
    pub grid_occupancy: usize,
    pub resolution: usize,
}

/// Cues for every label of an ordered scene sequence. Output is grouped by
/// frame and ordered by box index within a frame.
pub fn mine_cues(
    scenes: &[DenseScene],
    labels: &[Vec<Box3D>],
    prototypes: &SizePrototypes,
    cfg: &CueConfig,
) -> Result<Vec<CueRecord>, CueError> {
    cfg.validate()?;
    if scenes.len() != labels.len() {
        return Err(CueError::Misaligned(labels.len(), scenes.len()));
    }
    let tracks = track(labels, &cfg.tracker);
    let mut owner: Vec<Vec<usize>> = labels.iter().map(|l| vec![usize::MAX; l.len()]).collect();
    for t in &tracks {
        for o in &t.observations {
            owner[o.frame][o.box_index] = t.id;
        }
    }
    let per_frame: Vec<Vec<CueRecord>> = scenes
        .par_iter()
        .zip(labels.par_iter())
        .zip(owner.par_iter())
        .map(|((scene, boxes), owners)| {
            boxes
                .iter()
                .zip(owners)
                .enumerate()
                .map(|(j, (b, &tid))| {
                    let pts = &scene.cloud.points;
                    let (point_count, mean_intensity) = instance_attributes(pts, b);
                    let dist = distribution_score(b, pts, cfg.resolution, cfg.norm_range)?;
                    let (s_cons, prototype_class) = box_consistency(b, prototypes, cfg.raw_sizes)?;
                    let velocity = tracks[tid].velocity;
                    let speed = velocity[0].hypot(velocity[1]);
                    Ok(CueRecord {
                        frame_id: scene.frame_id(),
                        box_index: j,
                        track_id: tid,
                        bbox: *b,
                        point_count,
                        mean_intensity,
                        velocity,
                        speed,
                        dynamic: speed > cfg.dynamic_speed,
                        distance: b.range(),
                        s_dis: dist.score,
                        s_cons,
                        prototype_class,
                        grid_occupancy: dist.occupied_cells,
                        resolution: cfg.resolution,
                    })
                })
                .collect::<Result<Vec<_>, CueError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

pub fn write_cues_jsonl<W: Write>(records: &[CueRecord], mut out: W) -> Result<(), CueError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CueError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_cues_jsonl<R: BufRead>(input: R) -> Result<Vec<CueRecord>, CueError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CueError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{points_in_box, Point, PointCloud};

    fn scene(frame: u32, pts: Vec<Point>) -> DenseScene {
        DenseScene::new(PointCloud::new(pts, frame))
    }

    #[test]
    fn empty_labels_give_no_records() {
        let out = mine_cues(&[scene(0, vec![])], &[vec![]], &SizePrototypes::default(), &CueConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn records_match_recount_and_roundtrip() {
        let pts: Vec<Point> = (0..300)
            .map(|i| {
                let t = i as f64;
                Point::new(5.0 + (t * 0.37) % 6.0, -2.0 + (t * 0.53) % 4.0, (t * 0.11) % 2.0, (t * 0.07) % 1.0)
            })
            .collect();
        let boxes = vec![
            Box3D::new([7.0, 0.0, 1.0], [4.7, 1.9, 1.7], 0.2, ObjectClass::Vehicle),
            Box3D::new([9.5, 1.0, 0.9], [0.8, 0.8, 1.7], -0.4, ObjectClass::Unknown),
        ];
        let scenes = vec![scene(3, pts.clone()), scene(4, pts.clone())];
        let labels = vec![boxes.clone(), boxes.clone()];
        let recs = mine_cues(&scenes, &labels, &SizePrototypes::default(), &CueConfig::default()).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert_eq!(r.point_count, points_in_box(&pts, &r.bbox).len());
            assert!((0.0..=1.0).contains(&r.s_cons));
            assert!((0.0..=2.0).contains(&r.s_dis));
        }
        assert_eq!(recs[0].track_id, recs[2].track_id);
        assert_eq!(recs[1].prototype_class, ObjectClass::Pedestrian);
        let mut buf = Vec::new();
        write_cues_jsonl(&recs, &mut buf).unwrap();
        assert_eq!(read_cues_jsonl(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        assert!(matches!(
            mine_cues(&[], &[vec![]], &SizePrototypes::default(), &CueConfig::default()),
            Err(CueError::Misaligned(1, 0))
        ));
    }
}
