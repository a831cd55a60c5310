//! On-disk formats: KITTI-style binary sweeps, pose lists, label files and
//! the dataset manifest tying sweeps to frames.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{Pose, Sweep, SweepSequence};
use crate::geometry::{Box3D, Point, PointCloud};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: size {len} is not a multiple of 16 bytes")]
    PointRecord { path: PathBuf, len: usize },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// Reads little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_kitti_bin(path: &Path, frame_id: u32) -> Result<PointCloud, IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::PointRecord { path: path.to_path_buf(), len: bytes.len() });
    }
    let f = |c: &[u8]| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let points = bytes
        .chunks_exact(16)
        .map(|r| Point::new(f(&r[0..4]), f(&r[4..8]), f(&r[8..12]), f(&r[12..16])))
        .collect();
    Ok(PointCloud::new(points, frame_id))
}

pub fn write_kitti_bin(cloud: &PointCloud, path: &Path) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(16 * cloud.len());
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(file_err(path))
}

fn parse_floats(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>, IoError> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("{t:?}: {e}"),
            })
        })
        .collect()
}

/// One pose per line: 12 (KITTI, top three rows) or 16 row-major values.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v = parse_floats(path, i + 1, line)?;
        let mut m = Pose::IDENTITY.0;
        match v.len() {
            12 | 16 => m[..v.len()].copy_from_slice(&v),
            n => {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 12 or 16 values, got {n}"),
                })
            }
        }
        poses.push(Pose(m));
    }
    Ok(poses)
}

pub fn write_poses(poses: &[Pose], path: &Path) -> Result<(), IoError> {
    let text: String = poses
        .iter()
        .map(|p| p.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    fs::write(path, text).map_err(file_err(path))
}

/// Labels grouped by frame id.
pub type FrameLabels = BTreeMap<u32, Vec<Box3D>>;

/// `frame_id x y z l w h yaw class score weight` per line; `#` starts a
/// comment. Values are written in shortest round-trip form.
pub fn write_labels_txt(labels: &FrameLabels, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut put = || -> std::io::Result<()> {
        for (frame, boxes) in labels {
            for b in boxes {
                writeln!(
                    w,
                    "{frame} {} {} {} {} {} {} {} {} {} {}",
                    b.x,
                    b.y,
                    b.z,
                    b.l,
                    b.w,
                    b.h,
                    b.yaw,
                    b.class.as_str(),
                    b.score,
                    b.weight
                )?;
            }
        }
        w.flush()
    };
    put().map_err(file_err(path))
}

pub fn read_labels_txt(path: &Path) -> Result<FrameLabels, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut out = FrameLabels::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| IoError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 11 {
            return Err(err(format!("expected 11 fields, got {}", t.len())));
        }
        let frame: u32 = t[0].parse().map_err(|e| err(format!("frame id {:?}: {e}", t[0])))?;
        let num = |k: usize| t[k].parse::<f64>().map_err(|e| err(format!("field {} {:?}: {e}", k + 1, t[k])));
        let class = t[8].parse().map_err(|e| err(format!("{e}")))?;
        let b = Box3D {
            x: num(1)?,
            y: num(2)?,
            z: num(3)?,
            l: num(4)?,
            w: num(5)?,
            h: num(6)?,
            yaw: num(7)?,
            class,
            score: num(9)?,
            weight: num(10)?,
        };
        b.validate().map_err(|e| err(e.to_string()))?;
        out.entry(frame).or_default().push(b);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelLine {
    frame_id: u32,
    #[serde(flatten)]
    bbox: Box3D,
}

pub fn write_labels_jsonl(labels: &FrameLabels, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    for (frame, boxes) in labels {
        for b in boxes {
            let line = serde_json::to_string(&LabelLine { frame_id: *frame, bbox: *b })
                .map_err(|e| IoError::File { path: path.to_path_buf(), source: e.into() })?;
            writeln!(w, "{line}").map_err(file_err(path))?;
        }
    }
    w.flush().map_err(file_err(path))
}

pub fn read_labels_jsonl(path: &Path) -> Result<FrameLabels, IoError> {
    let reader = BufReader::new(File::open(path).map_err(file_err(path))?);
    let mut out = FrameLabels::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelLine = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(rec.frame_id).or_default().push(rec.bbox);
    }
    Ok(out)
}

/// Reads `.txt` or `.jsonl` labels by extension.
pub fn read_labels(path: &Path) -> Result<FrameLabels, IoError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_labels_jsonl(path)
    } else {
        read_labels_txt(path)
    }
}

/// Writes `labels.txt` and `labels.jsonl` into `dir`.
pub fn write_labels(labels: &FrameLabels, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    write_labels_txt(labels, &dir.join("labels.txt"))?;
    write_labels_jsonl(labels, &dir.join("labels.jsonl"))
}

pub const MANIFEST: &str = "dataset.json";

/// Sweep files `sweeps/NNNNNN.bin`, one pose per sweep in `poses.txt`; frame
/// `k` is centered on sweep `k + context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub context: usize,
    pub sweeps: usize,
    /// Frame id of every sweep, strictly increasing.
    pub sweep_ids: Vec<u32>,
}

impl Manifest {
    pub fn frame_count(&self) -> usize {
        self.sweeps.saturating_sub(2 * self.context)
    }
}

pub fn sweep_path(dir: &Path, id: u32) -> PathBuf {
    dir.join("sweeps").join(format!("{id:06}.bin"))
}

pub fn write_dataset(dir: &Path, context: usize, sweeps: &[Sweep]) -> Result<(), IoError> {
    fs::create_dir_all(dir.join("sweeps")).map_err(file_err(dir))?;
    for s in sweeps {
        write_kitti_bin(&s.cloud, &sweep_path(dir, s.cloud.frame_id))?;
    }
    write_poses(&sweeps.iter().map(|s| s.pose).collect::<Vec<_>>(), &dir.join("poses.txt"))?;
    let m = Manifest { context, sweeps: sweeps.len(), sweep_ids: sweeps.iter().map(|s| s.cloud.frame_id).collect() };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&m).map_err(|e| IoError::Manifest { path: path.clone(), message: e.to_string() })?;
    fs::write(&path, text + "\n").map_err(file_err(&path))
}

/// A dataset directory loaded into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub sweeps: Vec<Sweep>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.manifest.frame_count()
    }

    pub fn frame_id(&self, k: usize) -> u32 {
        self.manifest.sweep_ids[k + self.manifest.context]
    }

    pub fn sequence(&self, k: usize) -> Result<SweepSequence, crate::aggregation::AggregationError> {
        SweepSequence::new(self.sweeps[k..k + 2 * self.manifest.context + 1].to_vec())
    }
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(file_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| IoError::Manifest { path: path.clone(), message: e.to_string() })?;
    if manifest.sweep_ids.len() != manifest.sweeps || manifest.frame_count() == 0 {
        return Err(IoError::Manifest {
            path,
            message: format!("{} sweeps with context {} give no frames", manifest.sweeps, manifest.context),
        });
    }
    let poses = read_poses(&dir.join("poses.txt"))?;
    if poses.len() != manifest.sweeps {
        return Err(IoError::Manifest { path, message: format!("{} poses for {} sweeps", poses.len(), manifest.sweeps) });
    }
    let sweeps = manifest
        .sweep_ids
        .iter()
        .zip(poses)
        .map(|(&id, pose)| Ok(Sweep { cloud: read_kitti_bin(&sweep_path(dir, id), id)?, pose }))
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(Dataset { manifest, sweeps })
}
