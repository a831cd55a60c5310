use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::geometry::{iou_3d, Box3D, ObjectClass};
use crate::reasoner::BranchCounts;

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.5, 0.7];
pub const HISTOGRAM_BINS: usize = 10;
/// Range bands `[lo, hi)` in meters; the last one is open.
pub const RANGE_BANDS: [(f64, f64); 3] = [(0.0, 30.0), (30.0, 50.0), (50.0, f64::INFINITY)];

/// IoU threshold used for a class in the range-band breakdown.
pub fn band_threshold(class: ObjectClass) -> f64 {
    if class == ObjectClass::Vehicle {
        0.7
    } else {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub lo: f64,
    /// `None` for the open last band.
    pub hi: Option<f64>,
    pub truths: usize,
    pub ap: BTreeMap<ObjectClass, f64>,
    /// Mean AP over classes with truth boxes in the band.
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub predictions: usize,
    pub truths: usize,
    /// True positives at each threshold, aligned with the report thresholds.
    pub tp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouHistogram {
    /// `bins + 1` edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Class-agnostic matching.
    pub overall: Vec<ThresholdMetrics>,
    pub per_class: BTreeMap<ObjectClass, Vec<ThresholdMetrics>>,
    pub histogram: IouHistogram,
    pub matched_pairs: usize,
    pub mean_matched_iou: f64,
    pub bands: Vec<BandMetrics>,
    pub frames: Vec<FrameMetrics>,
    /// Set when there were no predictions at all; precision is then 0
    /// unless there was also nothing to find.
    pub empty_predictions: bool,
    pub branches: Option<BranchCounts>,
}

impl EvalReport {
    pub fn at(&self, iou: f64) -> Option<&ThresholdMetrics> {
        self.thresholds.iter().position(|t| (t - iou).abs() < 1e-12).map(|k| &self.overall[k])
    }
}

/// Greedy matching in descending score order (stable on ties): each
/// prediction takes the unmatched truth with the highest IoU, and counts
/// as a match when that IoU reaches `threshold`. Returns, per prediction,
/// the matched truth and IoU.
pub fn greedy_match(pred: &[Box3D], truth: &[Box3D], threshold: f64) -> Vec<Option<(usize, f64)>> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score));
    let mut taken = vec![false; truth.len()];
    let mut out = vec![None; pred.len()];
    for i in order {
        let best = truth
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, t)| (j, iou_3d(&pred[i], t)))
            .fold(None::<(usize, f64)>, |acc, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            });
        if let Some((j, v)) = best {
            if v >= threshold && v > 0.0 {
                taken[j] = true;
                out[i] = Some((j, v));
            }
        }
    }
    out
}

/// 11-point interpolated AP from scored hit flags.
pub fn average_precision(mut scored: Vec<(f64, bool)>, total_truth: usize) -> f64 {
    if total_truth == 0 {
        return if scored.is_empty() { 1.0 } else { 0.0 };
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(scored.len());
    for (k, (_, hit)) in scored.iter().enumerate() {
        tp += usize::from(*hit);
        curve.push((tp as f64 / total_truth as f64, tp as f64 / (k + 1) as f64));
    }
    (0..=10)
        .map(|r| {
            let r = r as f64 / 10.0;
            curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn metrics(pred: &[Vec<Box3D>], truth: &[Vec<Box3D>], iou: f64) -> (ThresholdMetrics, Vec<usize>) {
    let (mut tp, mut np, mut nt) = (0, 0, 0);
    let mut scored = Vec::new();
    let mut per_frame = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(truth) {
        let m = greedy_match(p, t, iou);
        let hits = m.iter().filter(|x| x.is_some()).count();
        scored.extend(p.iter().zip(&m).map(|(b, x)| (b.score, x.is_some())));
        tp += hits;
        np += p.len();
        nt += t.len();
        per_frame.push(hits);
    }
    let precision = if np == 0 { if nt == 0 { 1.0 } else { 0.0 } } else { tp as f64 / np as f64 };
    (
        ThresholdMetrics {
            iou,
            tp,
            fp: np - tp,
            fn_: nt - tp,
            precision,
            recall: ratio(tp, nt, 1.0),
            ap: average_precision(scored, nt),
        },
        per_frame,
    )
}

fn filter(sets: &[Vec<Box3D>], keep: impl Fn(&Box3D) -> bool) -> Vec<Vec<Box3D>> {
    sets.iter().map(|s| s.iter().filter(|b| keep(b)).copied().collect()).collect()
}

/// Precision, recall and AP of `pred` against `truth` (one set per frame).
pub fn evaluate(pred: &[Vec<Box3D>], truth: &[Vec<Box3D>], thresholds: &[f64]) -> Result<EvalReport, BenchError> {
    if pred.len() != truth.len() {
        return Err(BenchError::FrameCount { pred: pred.len(), truth: truth.len() });
    }
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(BenchError::Spec(vec!["thresholds".into()]));
    }
    for b in pred.iter().chain(truth).flatten() {
        b.validate()?;
    }
    let mut overall = Vec::new();
    let mut frame_tp = vec![Vec::new(); pred.len()];
    for &t in thresholds {
        let (m, per_frame) = metrics(pred, truth, t);
        overall.push(m);
        for (f, hits) in frame_tp.iter_mut().zip(per_frame) {
            f.push(hits);
        }
    }
    let mut per_class = BTreeMap::new();
    for class in ObjectClass::ALL {
        let p = filter(pred, |b| b.class == class);
        let t = filter(truth, |b| b.class == class);
        if p.iter().chain(&t).all(Vec::is_empty) {
            continue;
        }
        per_class.insert(class, thresholds.iter().map(|&th| metrics(&p, &t, th).0).collect());
    }

    let mut counts = vec![0usize; HISTOGRAM_BINS];
    let mut sum_iou = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        for (_, v) in greedy_match(p, t, 0.0).into_iter().flatten() {
            counts[((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1;
            sum_iou += v;
        }
    }
    let matched_pairs: usize = counts.iter().sum();
    let histogram = IouHistogram {
        edges: (0..=HISTOGRAM_BINS).map(|k| k as f64 / HISTOGRAM_BINS as f64).collect(),
        counts,
    };

    let bands = RANGE_BANDS
        .iter()
        .map(|&(lo, hi)| {
            let inside = |b: &Box3D| (lo..hi).contains(&b.bev_range());
            let mut ap = BTreeMap::new();
            let mut truths = 0;
            for class in ObjectClass::KNOWN {
                let p = filter(pred, |b| b.class == class && inside(b));
                let t = filter(truth, |b| b.class == class && inside(b));
                let n: usize = t.iter().map(Vec::len).sum();
                truths += n;
                if n > 0 {
                    ap.insert(class, metrics(&p, &t, band_threshold(class)).0.ap);
                }
            }
            let map = if ap.is_empty() { 0.0 } else { ap.values().sum::<f64>() / ap.len() as f64 };
            BandMetrics { lo, hi: hi.is_finite().then_some(hi), truths, ap, map }
        })
        .collect();

    let frames = pred
        .iter()
        .zip(truth)
        .zip(frame_tp)
        .enumerate()
        .map(|(frame, ((p, t), tp))| FrameMetrics { frame, predictions: p.len(), truths: t.len(), tp })
        .collect();

    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        overall,
        per_class,
        histogram,
        matched_pairs,
        mean_matched_iou: if matched_pairs > 0 { sum_iou / matched_pairs as f64 } else { 0.0 },
        bands,
        frames,
        empty_predictions: pred.iter().all(Vec::is_empty),
        branches: None,
    })
}

/// Writes `report.json`, `frames.csv` and `iou_histogram.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| BenchError::Format(e.to_string()))?;
    fs::write(dir.join("report.json"), json + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("frames.csv")).map_err(|e| BenchError::Format(e.to_string()))?;
    let mut header = vec!["frame".to_string(), "predictions".into(), "truths".into()];
    for t in &report.thresholds {
        header.push(format!("tp@{t}"));
        header.push(format!("precision@{t}"));
        header.push(format!("recall@{t}"));
    }
    w.write_record(&header).map_err(|e| BenchError::Format(e.to_string()))?;
    for f in &report.frames {
        let mut row = vec![f.frame.to_string(), f.predictions.to_string(), f.truths.to_string()];
        for tp in &f.tp {
            row.push(tp.to_string());
            row.push(ratio(*tp, f.predictions, if f.truths == 0 { 1.0 } else { 0.0 }).to_string());
            row.push(ratio(*tp, f.truths, 1.0).to_string());
        }
        w.write_record(&row).map_err(|e| BenchError::Format(e.to_string()))?;
    }
    w.flush()?;

    let mut h = csv::Writer::from_path(dir.join("iou_histogram.csv")).map_err(|e| BenchError::Format(e.to_string()))?;
    h.write_record(["lo", "hi", "count"]).map_err(|e| BenchError::Format(e.to_string()))?;
    for (k, c) in report.histogram.counts.iter().enumerate() {
        let row = [report.histogram.edges[k].to_string(), report.histogram.edges[k + 1].to_string(), c.to_string()];
        h.write_record(&row).map_err(|e| BenchError::Format(e.to_string()))?;
    }
    h.flush()?;
    Ok(())
}
