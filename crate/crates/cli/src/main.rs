use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use owl_core::aggregation::Sweep;
use owl_core::bench::{generate_drive, write_report, EvalReport};
use owl_core::geometry::Box3D;
use owl_core::io::{write_dataset, write_labels, write_labels_txt, FrameLabels};
use owl_core::occupancy::{export_warmup, import_warmup};
use owl_core::pipeline::{
    align_labels, evaluate_labels, frame_labels, load_scenes, make_reasoner, read_frame_labels, run_cues, run_e2e,
    run_labels, run_refine, run_selftrain, run_warmup, write_branches_csv, write_config, write_cues, write_json,
    write_round, PipelineConfig, PipelineError, ReasonerKind,
};
use owl_core::scene::DenseScene;
use tracing::info;

#[derive(Parser)]
#[command(name = "owl", version, about = "Unsupervised LiDAR pseudo-labelling pipeline")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "owl-out")]
    output: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Reasoner::Rules)]
    reasoner: Reasoner,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reasoner {
    Rules,
    Remote,
    Replay,
}

impl From<Reasoner> for ReasonerKind {
    fn from(r: Reasoner) -> Self {
        match r {
            Reasoner::Rules => ReasonerKind::Rules,
            Reasoner::Remote => ReasonerKind::Remote,
            Reasoner::Replay => ReasonerKind::Replay,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic drive as a dataset directory with truth labels.
    Generate,
    /// Initial labels from clustering.
    Labels(DatasetArgs),
    /// Occupancy warm-up of the detector backbone.
    Warmup(LabelledArgs),
    /// Per-box cue records.
    Cues(LabelledArgs),
    /// Cue-based refinement of a label set.
    Refine(ReasonArgs),
    /// Weighted self-training rounds.
    Selftrain(SelfTrainArgs),
    /// Compare predicted labels with truth.
    Eval(EvalArgs),
    /// Generate a drive and run every stage on it.
    E2e(LogArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset directory (as written by `generate`).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct LabelledArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Label file (.txt or .jsonl).
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct LogArgs {
    /// Remote reasoner log: written by `--reasoner remote`, read by `--reasoner replay`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReasonArgs {
    #[command(flatten)]
    labelled: LabelledArgs,
    #[command(flatten)]
    log: LogArgs,
}

#[derive(Args)]
struct SelfTrainArgs {
    #[command(flatten)]
    reason: ReasonArgs,
    /// Warm-up parameters from `warmup`.
    #[arg(long)]
    warmup: Option<PathBuf>,
    /// Truth labels; each round is evaluated against them when given.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) if !path.exists() => return Err(PipelineError::MissingInput(path.display().to_string())),
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Format(format!("thread pool: {e}")))?;
    }
    let out = &cli.output;
    match &cli.command {
        Command::Generate => generate(&cfg, out),
        Command::Labels(a) => {
            let (ids, scenes) = scenes(&a.input, &cfg)?;
            let labels = run_labels(&scenes, &cfg)?;
            write_config(out, &cfg)?;
            write_labels(&frame_labels(&ids, &labels), out)?;
            info!(frames = ids.len(), boxes = count(&labels), "labels written");
            Ok(())
        }
        Command::Warmup(a) => {
            let (ids, scenes, labels) = labelled(a, &cfg)?;
            let warm = run_warmup(&scenes, &labels, &cfg)?;
            write_config(out, &cfg)?;
            export_warmup(&warm.predictor, &out.join("warmup.bin"))?;
            write_json(
                &out.join("losses.json"),
                &serde_json::json!({ "initial": warm.initial_loss, "epochs": warm.epoch_losses }),
            )?;
            info!(frames = ids.len(), initial = warm.initial_loss, last = warm.final_loss(), "warm-up done");
            Ok(())
        }
        Command::Cues(a) => {
            let (_, scenes, labels) = labelled(a, &cfg)?;
            let cues = run_cues(&scenes, &labels, &cfg)?;
            write_config(out, &cfg)?;
            write_cues(&out.join("cues.jsonl"), &cues)
        }
        Command::Refine(a) => {
            let (ids, scenes, labels) = labelled(&a.labelled, &cfg)?;
            let mut reasoner = make_reasoner(cli.reasoner.into(), &cfg, a.log.log.as_deref())?;
            let (icr, refined) = run_refine(&scenes, &labels, reasoner.as_mut(), &cfg)?;
            write_config(out, &cfg)?;
            write_labels(&frame_labels(&ids, &refined), out)?;
            let rows: Vec<_> = icr.frames.iter().map(|f| (f.frame_id, f.outcome.counts)).collect();
            write_branches_csv(&out.join("branches.csv"), &rows)?;
            write_cues(&out.join("cues.jsonl"), &icr.cues)?;
            let c = icr.counts();
            println!("refined {} labels: A {} B {} C {} (s_cons {})", count(&labels), c.a, c.b, c.c, cfg.refine.orientation());
            Ok(())
        }
        Command::Selftrain(a) => {
            let (ids, scenes, labels) = labelled(&a.reason.labelled, &cfg)?;
            let warm = match &a.warmup {
                Some(p) if !p.exists() => return Err(PipelineError::MissingInput(p.display().to_string())),
                Some(p) => Some(import_warmup(p)?),
                None => None,
            };
            let truth = match &a.truth {
                Some(p) => Some(align_labels(&ids, &read_frame_labels(p)?)),
                None => None,
            };
            let mut reasoner = make_reasoner(cli.reasoner.into(), &cfg, a.reason.log.log.as_deref())?;
            let rounds = run_selftrain(&scenes, &labels, reasoner.as_mut(), warm.as_ref(), &cfg)?;
            write_config(out, &cfg)?;
            for r in &rounds {
                let s = write_round(&out.join(format!("round_{}", r.round)), &ids, r, truth.as_deref(), &cfg)?;
                if let Some(d) = &s.diverged {
                    eprintln!("round {}: detector diverged, kept previous labels ({d})", r.round);
                }
            }
            Ok(())
        }
        Command::Eval(a) => {
            let truth = read_frame_labels(&a.truth)?;
            let pred = read_frame_labels(&a.pred)?;
            let report = eval(&pred, &truth, &cfg)?;
            write_config(out, &cfg)?;
            write_report(&report, out)?;
            for m in &report.overall {
                println!("IoU {:.2}: precision {:.4} recall {:.4} AP {:.4}", m.iou, m.precision, m.recall, m.ap);
            }
            Ok(())
        }
        Command::E2e(a) => {
            let summary = run_e2e(&cfg, out, cli.reasoner.into(), a.log.as_deref())?;
            let last = summary.rounds.last().and_then(|r| r.eval.as_ref()).unwrap_or(&summary.refined);
            for m in &last.metrics {
                println!("IoU {:.2}: precision {:.4} recall {:.4} AP {:.4}", m.iou, m.precision, m.recall, m.ap);
            }
            Ok(())
        }
    }
}

fn count(labels: &[Vec<Box3D>]) -> usize {
    labels.iter().map(Vec::len).sum()
}

fn generate(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let drive = generate_drive(&cfg.scene)?;
    let sweeps: Vec<Sweep> = drive.sweeps.iter().map(|s| Sweep { cloud: s.cloud.clone(), pose: s.pose }).collect();
    write_config(out, cfg)?;
    write_dataset(out, cfg.scene.context, &sweeps)?;
    let frames: Vec<_> = drive.frames().collect();
    let ids: Vec<u32> = frames.iter().map(|f| f.frame_id).collect();
    let truth: Vec<Vec<Box3D>> = frames.iter().map(|f| f.truth().to_vec()).collect();
    write_labels_txt(&frame_labels(&ids, &truth), &out.join("truth.txt"))?;
    println!("{} sweeps, {} frames, {} truth boxes", sweeps.len(), ids.len(), count(&truth));
    Ok(())
}

fn scenes(input: &Path, cfg: &PipelineConfig) -> Result<(Vec<u32>, Vec<DenseScene>), PipelineError> {
    let (ids, prepared) = load_scenes(input, cfg)?;
    Ok((ids, prepared.into_iter().map(|p| p.scene).collect()))
}

fn labelled(a: &LabelledArgs, cfg: &PipelineConfig) -> Result<(Vec<u32>, Vec<DenseScene>, Vec<Vec<Box3D>>), PipelineError> {
    let labels = read_frame_labels(&a.labels)?;
    let (ids, scenes) = scenes(&a.data.input, cfg)?;
    let stray: Vec<u32> = labels.keys().filter(|k| !ids.contains(k)).copied().collect();
    if !stray.is_empty() {
        return Err(PipelineError::Format(format!("labels for frames not in the dataset: {stray:?}")));
    }
    Ok((ids.clone(), scenes, align_labels(&ids, &labels)))
}

/// Evaluates over the truth's frame set; frames without predictions count
/// as empty.
fn eval(pred: &FrameLabels, truth: &FrameLabels, cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let stray: Vec<u32> = pred.keys().filter(|k| !truth.contains_key(k)).copied().collect();
    if !stray.is_empty() {
        return Err(PipelineError::Format(format!("predictions for frames without truth: {stray:?}")));
    }
    let ids: Vec<u32> = truth.keys().copied().collect();
    evaluate_labels(&align_labels(&ids, pred), &align_labels(&ids, truth), cfg)
}
