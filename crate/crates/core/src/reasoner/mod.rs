//! Cue reasoners (rule table, remote large model, log replay, no-op) and
//! the three-branch label refiner.

mod refine;
mod remote;
mod rules;
mod types;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use refine::{effective_consistency, refine, Branch, BranchCounts, RefineConfig, RefineOutcome};
pub use remote::{
    parse_verdicts, LogEntry, RemoteConfig, RemoteReasoner, RemoteStats, ReplayReasoner, ENV_API_KEY, ENV_ENDPOINT,
    ENV_MODEL,
};
pub use rules::{reason_rule_based, rule_verdict, RuleConfig};
pub use types::{render_prompt, ReasonerRequest, ReasonerVerdict, SourcedVerdict, VerdictSource, TEMPLATE_ID};

use crate::cues::{box_consistency, mine_cues, CueConfig, CueError, CueRecord, SizePrototypes};
use crate::geometry::Box3D;
use crate::scene::DenseScene;

#[derive(Debug, thiserror::Error)]
pub enum ReasonerError {
    #[error("remote reasoner requested but no endpoint is configured (set OWL_LLM_ENDPOINT)")]
    Unconfigured,
    #[error("remote reasoner rejected the credentials (HTTP {0})")]
    Auth(u16),
    #[error("invalid reasoner configuration: {0}")]
    Config(String),
    #[error("{boxes} boxes, {verdicts} verdicts and {cues} cue scores are not aligned")]
    Misaligned { boxes: usize, verdicts: usize, cues: usize },
    #[error("reasoner returned {got} verdicts for {expected} boxes")]
    VerdictCount { expected: usize, got: usize },
    #[error("reasoner log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Cue(#[from] CueError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A source of per-box verdicts.
pub trait CueReasoner {
    fn reason(&mut self, req: &ReasonerRequest) -> Result<Vec<SourcedVerdict>, ReasonerError>;

    /// Counters for reasoners that talk to an endpoint or a log.
    fn stats(&self) -> Option<&RemoteStats> {
        None
    }
}

pub struct RuleReasoner {
    pub prototypes: SizePrototypes,
    pub rules: RuleConfig,
}

impl CueReasoner for RuleReasoner {
    fn reason(&mut self, req: &ReasonerRequest) -> Result<Vec<SourcedVerdict>, ReasonerError> {
        Ok(reason_rule_based(req, &self.prototypes, &self.rules)
            .into_iter()
            .map(|verdict| SourcedVerdict { verdict, source: VerdictSource::Rules })
            .collect())
    }
}

/// Keeps every box unchanged with full plausibility.
pub struct NoOpReasoner;

impl CueReasoner for NoOpReasoner {
    fn reason(&mut self, req: &ReasonerRequest) -> Result<Vec<SourcedVerdict>, ReasonerError> {
        Ok(req
            .cues
            .iter()
            .map(|c| SourcedVerdict {
                verdict: ReasonerVerdict { keep: true, s_rea: 1.0, delta: [0.0; 3], cls_new: c.bbox.class },
                source: VerdictSource::NoOp,
            })
            .collect())
    }
}

impl CueReasoner for RemoteReasoner {
    fn reason(&mut self, req: &ReasonerRequest) -> Result<Vec<SourcedVerdict>, ReasonerError> {
        RemoteReasoner::reason(self, req)
    }

    fn stats(&self) -> Option<&RemoteStats> {
        Some(&self.stats)
    }
}

impl CueReasoner for ReplayReasoner {
    fn reason(&mut self, req: &ReasonerRequest) -> Result<Vec<SourcedVerdict>, ReasonerError> {
        Ok(ReplayReasoner::reason(self, req))
    }

    fn stats(&self) -> Option<&RemoteStats> {
        Some(&self.stats)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcrConfig {
    pub cues: CueConfig,
    pub refine: RefineConfig,
    pub prototypes: SizePrototypes,
}

/// Scores attached to a refined box, computed after refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxScores {
    /// Effective consistency of the refined box.
    pub consistency: f64,
    pub s_rea: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRefinement {
    pub frame_id: u32,
    pub verdicts: Vec<SourcedVerdict>,
    pub outcome: RefineOutcome,
    /// One entry per output box.
    pub scores: Vec<BoxScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcrOutcome {
    pub cues: Vec<CueRecord>,
    pub frames: Vec<FrameRefinement>,
}

impl IcrOutcome {
    pub fn labels(&self) -> Vec<Vec<Box3D>> {
        self.frames.iter().map(|f| f.outcome.boxes.clone()).collect()
    }

    pub fn counts(&self) -> BranchCounts {
        let mut c = BranchCounts::default();
        for f in &self.frames {
            c += f.outcome.counts;
        }
        c
    }
}

/// Cue mining, reasoning and refinement over an ordered scene sequence.
pub fn instance_cued_refinement(
    scenes: &[DenseScene],
    labels: &[Vec<Box3D>],
    reasoner: &mut dyn CueReasoner,
    cfg: &IcrConfig,
) -> Result<IcrOutcome, ReasonerError> {
    cfg.refine.validate().map_err(ReasonerError::Config)?;
    let cues = mine_cues(scenes, labels, &cfg.prototypes, &cfg.cues)?;
    let mut frames = Vec::with_capacity(scenes.len());
    let mut offset = 0;
    for (scene, boxes) in scenes.iter().zip(labels) {
        let frame_cues = cues[offset..offset + boxes.len()].to_vec();
        offset += boxes.len();
        let s_cons: Vec<f64> = frame_cues.iter().map(|c| c.s_cons).collect();
        let req = ReasonerRequest::new(scene.frame_id(), cfg.cues.norm_range, frame_cues);
        let verdicts = reasoner.reason(&req)?;
        if verdicts.len() != boxes.len() {
            return Err(ReasonerError::VerdictCount { expected: boxes.len(), got: verdicts.len() });
        }
        let plain: Vec<ReasonerVerdict> = verdicts.iter().map(|v| v.verdict).collect();
        let outcome = refine(boxes, &plain, &s_cons, &cfg.refine)?;
        let scores = outcome
            .boxes
            .par_iter()
            .zip(outcome.sources.par_iter())
            .map(|(b, &src)| {
                let (s, _) = box_consistency(b, &cfg.prototypes, cfg.cues.raw_sizes)?;
                Ok(BoxScores { consistency: effective_consistency(s, cfg.refine.invert_s_cons), s_rea: plain[src].s_rea })
            })
            .collect::<Result<Vec<_>, CueError>>()?;
        frames.push(FrameRefinement { frame_id: scene.frame_id(), verdicts, outcome, scores });
    }
    Ok(IcrOutcome { cues, frames })
}
