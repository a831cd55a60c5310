use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::config::{DetectorKind, MotionParams, PipelineConfig};
use super::PipelineError;
use crate::aggregation::{aggregate_sweeps, filter_motion_artifacts, persistence_scores_aggregated, Sweep, SweepSequence};
use crate::bench::{
    corrupt_labels, evaluate, generate_drive, write_report, EvalReport, GeneratedScene, ThresholdMetrics,
};
use crate::clustering::initial_labels;
use crate::cues::{mine_cues, write_cues_jsonl, CueRecord};
use crate::geometry::{Box3D, PointCloud};
use crate::ground::{remove_ground, GroundParams};
use crate::io::{read_dataset, read_labels, write_dataset, write_labels, FrameLabels};
use crate::occupancy::{export_warmup, train_warmup, OccupancyPredictor, WarmupOutcome};
use crate::reasoner::{
    instance_cued_refinement, BranchCounts, CueReasoner, IcrOutcome, RemoteReasoner, ReplayReasoner, RuleReasoner,
};
use crate::scene::DenseScene;
use crate::selftrain::{
    self_train, weighted_labels, Detector, PassThroughDetector, RoundOutcome, ToyGridDetector, TrainReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pub scene: DenseScene,
    pub aggregated: usize,
    pub after_motion: usize,
    pub ground_points: usize,
    /// No ground plane was found; the cloud was kept whole.
    pub ground_warning: bool,
}

/// Aggregate, drop motion artifacts and remove the ground plane.
pub fn prepare_frame(seq: &SweepSequence, motion: &MotionParams, ground: &GroundParams) -> Result<PreparedFrame, PipelineError> {
    let agg = aggregate_sweeps(seq)?;
    let field = persistence_scores_aggregated(&agg, motion.radius)?;
    let filtered = filter_motion_artifacts(&agg, &field, motion.tau)?;
    let frame_id = agg.cloud.frame_id;
    if filtered.cloud.is_empty() {
        return Ok(PreparedFrame {
            scene: DenseScene::new(PointCloud::new(Vec::new(), frame_id)),
            aggregated: agg.cloud.len(),
            after_motion: 0,
            ground_points: 0,
            ground_warning: true,
        });
    }
    let split = remove_ground(&filtered.cloud, ground)?;
    let mut cloud = split.nonground;
    cloud.frame_id = frame_id;
    Ok(PreparedFrame {
        scene: DenseScene::new(cloud),
        aggregated: agg.cloud.len(),
        after_motion: filtered.cloud.len(),
        ground_points: split.ground.len(),
        ground_warning: split.warning,
    })
}

pub fn prepare_frames(seqs: &[SweepSequence], cfg: &PipelineConfig) -> Result<Vec<PreparedFrame>, PipelineError> {
    seqs.par_iter().map(|s| prepare_frame(s, &cfg.motion, &cfg.ground)).collect()
}

/// Context-sweep separation of moving and static points against generator
/// truth. Center-sweep points are always kept and are not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MarScore {
    pub moving_total: usize,
    pub moving_removed: usize,
    pub static_total: usize,
    pub static_retained: usize,
}

impl MarScore {
    pub fn removal_rate(&self) -> f64 {
        if self.moving_total == 0 {
            1.0
        } else {
            self.moving_removed as f64 / self.moving_total as f64
        }
    }

    pub fn retention_rate(&self) -> f64 {
        if self.static_total == 0 {
            1.0
        } else {
            self.static_retained as f64 / self.static_total as f64
        }
    }

    pub fn add(&mut self, o: &MarScore) {
        self.moving_total += o.moving_total;
        self.moving_removed += o.moving_removed;
        self.static_total += o.static_total;
        self.static_retained += o.static_retained;
    }
}

pub fn mar_score(frame: &GeneratedScene, motion: &MotionParams) -> Result<MarScore, PipelineError> {
    let agg = aggregate_sweeps(&frame.sequence()?)?;
    let field = persistence_scores_aggregated(&agg, motion.radius)?;
    let filtered = filter_motion_artifacts(&agg, &field, motion.tau)?;
    let mut kept = vec![false; agg.cloud.len()];
    for &i in &filtered.kept {
        kept[i] = true;
    }
    let mut s = MarScore::default();
    for (i, prov) in agg.provenance.iter().enumerate() {
        if prov.sweep == agg.center_sweep {
            continue;
        }
        if frame.sweeps[prov.sweep].truth[prov.index].moving {
            s.moving_total += 1;
            s.moving_removed += usize::from(!kept[i]);
        } else {
            s.static_total += 1;
            s.static_retained += usize::from(kept[i]);
        }
    }
    Ok(s)
}

/// Prepared scenes of every frame in a dataset directory, with frame ids.
pub fn load_scenes(dir: &Path, cfg: &PipelineConfig) -> Result<(Vec<u32>, Vec<PreparedFrame>), PipelineError> {
    if !dir.join(crate::io::MANIFEST).exists() {
        return Err(PipelineError::MissingInput(dir.join(crate::io::MANIFEST).display().to_string()));
    }
    let ds = read_dataset(dir)?;
    let seqs = (0..ds.frame_count()).map(|k| ds.sequence(k)).collect::<Result<Vec<_>, _>>()?;
    let ids = (0..ds.frame_count()).map(|k| ds.frame_id(k)).collect();
    Ok((ids, prepare_frames(&seqs, cfg)?))
}

pub fn run_labels(scenes: &[DenseScene], cfg: &PipelineConfig) -> Result<Vec<Vec<Box3D>>, PipelineError> {
    scenes.par_iter().map(|s| Ok(initial_labels(s, &cfg.labels)?.boxes)).collect()
}

pub fn run_warmup(scenes: &[DenseScene], labels: &[Vec<Box3D>], cfg: &PipelineConfig) -> Result<WarmupOutcome, PipelineError> {
    Ok(train_warmup(scenes, labels, &cfg.mask, &cfg.warmup)?)
}

pub fn run_cues(scenes: &[DenseScene], labels: &[Vec<Box3D>], cfg: &PipelineConfig) -> Result<Vec<CueRecord>, PipelineError> {
    Ok(mine_cues(scenes, labels, &cfg.prototypes, &cfg.cues)?)
}

/// Writes cue records as JSON lines.
pub fn write_cues(path: &Path, cues: &[CueRecord]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(PipelineError::file(path))?;
    Ok(write_cues_jsonl(cues, std::io::BufWriter::new(file))?)
}

/// Cue refinement followed by the per-label weighting.
pub fn run_refine(
    scenes: &[DenseScene],
    labels: &[Vec<Box3D>],
    reasoner: &mut dyn CueReasoner,
    cfg: &PipelineConfig,
) -> Result<(IcrOutcome, Vec<Vec<Box3D>>), PipelineError> {
    let icr = instance_cued_refinement(scenes, labels, reasoner, &cfg.icr())?;
    let weighted = weighted_labels(&icr, &cfg.selftrain.weights, cfg.refine.downweight_factor)?;
    Ok((icr, weighted))
}

pub fn run_selftrain(
    scenes: &[DenseScene],
    initial: &[Vec<Box3D>],
    reasoner: &mut dyn CueReasoner,
    warm: Option<&OccupancyPredictor>,
    cfg: &PipelineConfig,
) -> Result<Vec<RoundOutcome>, PipelineError> {
    let mut det: Box<dyn Detector> = match cfg.detector.kind {
        DetectorKind::Toy => Box::new(ToyGridDetector::new(cfg.detector.toy.clone())),
        DetectorKind::PassThrough => Box::new(PassThroughDetector::default()),
    };
    let warm = if cfg.detector.warm_start { warm } else { None };
    Ok(self_train(scenes, initial, det.as_mut(), reasoner, warm, &cfg.icr(), &cfg.selftrain)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerKind {
    Rules,
    Remote,
    Replay,
}

/// Builds the requested reasoner. The remote one logs to `log` (or the
/// configured path); replay reads `log` (or the configured path).
pub fn make_reasoner(kind: ReasonerKind, cfg: &PipelineConfig, log: Option<&Path>) -> Result<Box<dyn CueReasoner>, PipelineError> {
    let log = log.map(Path::to_path_buf).or_else(|| cfg.remote.log_path.clone());
    match kind {
        ReasonerKind::Rules => Ok(Box::new(RuleReasoner { prototypes: cfg.prototypes.clone(), rules: cfg.rules.clone() })),
        ReasonerKind::Remote => {
            let mut remote = cfg.remote.clone().with_env();
            remote.log_path = log;
            Ok(Box::new(RemoteReasoner::new(remote, cfg.prototypes.clone(), cfg.rules.clone())?))
        }
        ReasonerKind::Replay => {
            let path = log.ok_or_else(|| PipelineError::MissingInput("replay log (--log or remote.log_path)".into()))?;
            if !path.exists() {
                return Err(PipelineError::MissingInput(path.display().to_string()));
            }
            Ok(Box::new(ReplayReasoner::open(&path, cfg.remote.batch_size, cfg.prototypes.clone(), cfg.rules.clone())?))
        }
    }
}

pub fn frame_labels(ids: &[u32], labels: &[Vec<Box3D>]) -> FrameLabels {
    ids.iter().copied().zip(labels.iter().cloned()).collect()
}

/// Labels aligned with `ids`; frames without an entry get none.
pub fn align_labels(ids: &[u32], labels: &FrameLabels) -> Vec<Vec<Box3D>> {
    ids.iter().map(|id| labels.get(id).cloned().unwrap_or_default()).collect()
}

pub fn read_frame_labels(path: &Path) -> Result<FrameLabels, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.display().to_string()));
    }
    Ok(read_labels(path)?)
}

pub fn write_config(dir: &Path, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(PipelineError::file(dir))?;
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(PipelineError::file(&path))
}

pub fn write_branches_csv(path: &Path, rows: &[(u32, BranchCounts)]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Format(e.to_string()))?;
    let fmt = |e: csv::Error| PipelineError::Format(e.to_string());
    w.write_record(["frame_id", "a", "b", "c", "total"]).map_err(fmt)?;
    for (id, c) in rows {
        w.write_record([id.to_string(), c.a.to_string(), c.b.to_string(), c.c.to_string(), c.total().to_string()])
            .map_err(fmt)?;
    }
    w.flush().map_err(PipelineError::file(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(PipelineError::file(path))
}

pub fn evaluate_labels(pred: &[Vec<Box3D>], truth: &[Vec<Box3D>], cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    Ok(evaluate(pred, truth, &cfg.eval.thresholds)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub labels: usize,
    pub metrics: Vec<ThresholdMetrics>,
}

impl StageMetrics {
    fn of(labels: &[Vec<Box3D>], report: &EvalReport) -> Self {
        Self { labels: labels.iter().map(Vec::len).sum(), metrics: report.overall.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub detections: usize,
    pub diverged: Option<String>,
    pub branches: BranchCounts,
    pub train: Option<TrainReport>,
    pub eval: Option<StageMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eSummary {
    pub seed: u64,
    pub frames: usize,
    pub truth_boxes: usize,
    pub motion: MarScore,
    pub initial: StageMetrics,
    pub warmup_initial_loss: f64,
    pub warmup_final_loss: f64,
    pub refined: StageMetrics,
    pub refined_branches: BranchCounts,
    /// Whether refinement used `s_cons` as written or `1 - s_cons`.
    pub s_cons_orientation: String,
    pub rounds: Vec<RoundSummary>,
}

/// Writes one self-training round's artifacts; evaluates against `truth`
/// when given.
pub fn write_round(
    dir: &Path,
    ids: &[u32],
    round: &RoundOutcome,
    truth: Option<&[Vec<Box3D>]>,
    cfg: &PipelineConfig,
) -> Result<RoundSummary, PipelineError> {
    write_labels(&frame_labels(ids, &round.labels), dir)?;
    write_branches_csv(&dir.join("branches.csv"), &round.branches)?;
    let eval = match truth {
        Some(t) => {
            let report = evaluate_labels(&round.labels, t, cfg)?;
            write_report(&EvalReport { branches: Some(round.counts()), ..report.clone() }, &dir.join("report"))?;
            Some(StageMetrics::of(&round.labels, &report))
        }
        None => None,
    };
    let summary = RoundSummary {
        round: round.round,
        detections: round.detections,
        diverged: round.diverged.clone(),
        branches: round.counts(),
        train: round.train.clone(),
        eval,
    };
    write_json(&dir.join("metrics.json"), &summary)?;
    Ok(summary)
}

/// Generates the configured synthetic drive into `out/dataset`, then runs
/// every stage on it: initial labels, warm-up, cue refinement and
/// self-training, writing labels and reports for each.
pub fn run_e2e(
    cfg: &PipelineConfig,
    out: &Path,
    kind: ReasonerKind,
    log: Option<&Path>,
) -> Result<E2eSummary, PipelineError> {
    cfg.validate()?;
    write_config(out, cfg)?;
    let drive = generate_drive(&cfg.scene)?;
    let data_dir = out.join("dataset");
    let sweeps: Vec<Sweep> = drive.sweeps.iter().map(|s| Sweep { cloud: s.cloud.clone(), pose: s.pose }).collect();
    write_dataset(&data_dir, cfg.scene.context, &sweeps)?;
    let frames: Vec<GeneratedScene> = drive.frames().collect();
    let ids: Vec<u32> = frames.iter().map(|f| f.frame_id).collect();
    let truth: Vec<Vec<Box3D>> = frames.iter().map(|f| f.truth().to_vec()).collect();
    crate::io::write_labels_txt(&frame_labels(&ids, &truth), &data_dir.join("truth.txt"))?;

    let mut motion = MarScore::default();
    for s in frames.par_iter().map(|f| mar_score(f, &cfg.motion)).collect::<Result<Vec<_>, _>>()? {
        motion.add(&s);
    }

    let (loaded_ids, prepared) = load_scenes(&data_dir, cfg)?;
    debug_assert_eq!(loaded_ids, ids);
    let scenes: Vec<DenseScene> = prepared.into_iter().map(|p| p.scene).collect();

    let initial = run_labels(&scenes, cfg)?;
    write_labels(&frame_labels(&ids, &initial), &out.join("initial"))?;
    let initial_report = evaluate_labels(&initial, &truth, cfg)?;
    write_report(&initial_report, &out.join("initial").join("report"))?;
    info!(boxes = initial.iter().map(Vec::len).sum::<usize>(), "initial labels");

    let warm = run_warmup(&scenes, &initial, cfg)?;
    let warm_dir = out.join("warmup");
    fs::create_dir_all(&warm_dir).map_err(PipelineError::file(&warm_dir))?;
    export_warmup(&warm.predictor, &warm_dir.join("warmup.bin"))?;
    write_json(
        &warm_dir.join("losses.json"),
        &serde_json::json!({ "initial": warm.initial_loss, "epochs": warm.epoch_losses }),
    )?;

    if kind == ReasonerKind::Remote {
        let path = log.map(Path::to_path_buf).unwrap_or_else(|| out.join("reasoner_log.jsonl"));
        if path.exists() {
            fs::remove_file(&path).map_err(PipelineError::file(&path))?;
        }
    }
    let default_log: PathBuf = out.join("reasoner_log.jsonl");
    let log = match kind {
        ReasonerKind::Remote => Some(log.map(Path::to_path_buf).unwrap_or(default_log)),
        _ => log.map(Path::to_path_buf),
    };
    let mut reasoner = make_reasoner(kind, cfg, log.as_deref())?;

    let (icr, refined) = run_refine(&scenes, &initial, reasoner.as_mut(), cfg)?;
    let refined_dir = out.join("refined");
    write_labels(&frame_labels(&ids, &refined), &refined_dir)?;
    let rows: Vec<(u32, BranchCounts)> = icr.frames.iter().map(|f| (f.frame_id, f.outcome.counts)).collect();
    write_branches_csv(&refined_dir.join("branches.csv"), &rows)?;
    write_cues(&refined_dir.join("cues.jsonl"), &icr.cues)?;
    let refined_report = evaluate_labels(&refined, &truth, cfg)?;
    write_report(&EvalReport { branches: Some(icr.counts()), ..refined_report.clone() }, &refined_dir.join("report"))?;

    let rounds = run_selftrain(&scenes, &refined, reasoner.as_mut(), Some(&warm.predictor), cfg)?;
    let mut summaries = Vec::with_capacity(rounds.len());
    for r in &rounds {
        summaries.push(write_round(&out.join(format!("round_{}", r.round)), &ids, r, Some(&truth), cfg)?);
    }
    let final_labels = rounds.last().map(|r| r.labels.clone()).unwrap_or(refined.clone());
    let final_report = evaluate_labels(&final_labels, &truth, cfg)?;
    write_report(&final_report, &out.join("report"))?;

    let summary = E2eSummary {
        seed: cfg.seed,
        frames: ids.len(),
        truth_boxes: truth.iter().map(Vec::len).sum(),
        motion,
        initial: StageMetrics::of(&initial, &initial_report),
        warmup_initial_loss: warm.initial_loss,
        warmup_final_loss: warm.final_loss(),
        refined: StageMetrics::of(&refined, &refined_report),
        refined_branches: icr.counts(),
        s_cons_orientation: cfg.refine.orientation().to_string(),
        rounds: summaries,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Corrupted truth before and after cue refinement, then self-training.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub truth: Vec<Vec<Box3D>>,
    pub corrupted: Vec<Vec<Box3D>>,
    pub refined: Vec<Vec<Box3D>>,
    pub before: EvalReport,
    pub after: EvalReport,
    pub branches: BranchCounts,
    pub rounds: Vec<(RoundOutcome, EvalReport)>,
}

/// Runs cue refinement with `reasoner` on corrupted generator truth and
/// `self_train_rounds` self-training rounds from the refined labels.
pub fn refinement_benchmark(
    cfg: &PipelineConfig,
    reasoner: &mut dyn CueReasoner,
    self_train_rounds: usize,
) -> Result<BenchmarkOutcome, PipelineError> {
    cfg.validate()?;
    let drive = generate_drive(&cfg.scene)?;
    let frames: Vec<GeneratedScene> = drive.frames().collect();
    let seqs = frames.iter().map(|f| f.sequence()).collect::<Result<Vec<_>, _>>()?;
    let scenes: Vec<DenseScene> = prepare_frames(&seqs, cfg)?.into_iter().map(|p| p.scene).collect();
    let truth: Vec<Vec<Box3D>> = frames.iter().map(|f| f.truth().to_vec()).collect();
    let corrupted = truth
        .iter()
        .enumerate()
        .map(|(k, t)| Ok(corrupt_labels(t, &cfg.corruption, cfg.corruption_seed().wrapping_add(k as u64))?.boxes))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let (icr, refined) = run_refine(&scenes, &corrupted, reasoner, cfg)?;
    let before = evaluate_labels(&corrupted, &truth, cfg)?;
    let after = evaluate_labels(&refined, &truth, cfg)?;
    let mut rounds = Vec::new();
    if self_train_rounds > 0 {
        let mut st = cfg.clone();
        st.selftrain.rounds = self_train_rounds;
        for r in run_selftrain(&scenes, &refined, reasoner, None, &st)? {
            let report = evaluate_labels(&r.labels, &truth, cfg)?;
            rounds.push((r, report));
        }
    }
    Ok(BenchmarkOutcome { truth, corrupted, refined, before, after, branches: icr.counts(), rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate_drive;

    #[test]
    fn labels_follow_frame_ids() {
        let ids = [4, 9];
        let b = Box3D::new([1.0, 2.0, 0.8], [4.0, 1.8, 1.6], 0.0, crate::geometry::ObjectClass::Vehicle);
        let map = frame_labels(&ids, &[vec![b], vec![]]);
        assert_eq!(align_labels(&[9, 4, 5], &map), vec![vec![], vec![b], vec![]]);
    }

    #[test]
    fn prepared_frame_drops_ground() {
        let cfg = PipelineConfig::default();
        let drive = generate_drive(&crate::bench::SceneSpec { frames: 1, ..cfg.scene.clone() }).unwrap();
        let f = drive.frame(0);
        let p = prepare_frame(&f.sequence().unwrap(), &cfg.motion, &cfg.ground).unwrap();
        assert!(!p.ground_warning);
        assert!(p.ground_points > p.scene.cloud.len() / 2, "{} ground of {}", p.ground_points, p.after_motion);
        let low = p.scene.cloud.points.iter().filter(|q| q.z < 0.1).count();
        let minz = p.scene.cloud.points.iter().map(|q| q.z).fold(f64::INFINITY, f64::min);
        assert!(low * 100 < p.scene.cloud.len(), "{low} low points of {}, min z {minz}", p.scene.cloud.len());
    }
}
