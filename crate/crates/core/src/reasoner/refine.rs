use serde::{Deserialize, Serialize};
use tracing::warn;

use super::types::ReasonerVerdict;
use super::ReasonerError;
use crate::cues::SizePrototypes;
use crate::geometry::{Box3D, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Consistency threshold for retaining rejected boxes.
    pub eta: f64,
    /// Common per-class sizes `L_com` given to retained rejected boxes.
    pub common_sizes: SizePrototypes,
    /// Weight multiplier for retained rejected boxes.
    pub downweight_factor: f64,
    /// Use `1 - s_cons` as the consistency (high = plausible size).
    pub invert_s_cons: bool,
    /// A kept box whose correction makes a size non-positive goes through
    /// the rejected-box test instead of being dropped outright.
    pub demote_invalid: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            eta: 0.7,
            common_sizes: SizePrototypes::default(),
            downweight_factor: 0.5,
            invert_s_cons: true,
            demote_invalid: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(format!("eta must be in [0, 1], got {}", self.eta));
        }
        if !(self.downweight_factor > 0.0 && self.downweight_factor <= 1.0) {
            return Err(format!("downweight_factor must be in (0, 1], got {}", self.downweight_factor));
        }
        self.common_sizes.validate().map_err(|e| e.to_string())
    }

    pub fn orientation(&self) -> &'static str {
        if self.invert_s_cons {
            "inverted"
        } else {
            "as-written"
        }
    }
}

/// Consistency as used by the refiner and the sample weights.
pub fn effective_consistency(s_cons: f64, invert: bool) -> f64 {
    if invert {
        1.0 - s_cons
    } else {
        s_cons
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Kept; size corrected and class replaced.
    A,
    /// Rejected but consistent; common size, reduced weight.
    B,
    /// Dropped.
    C,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl BranchCounts {
    pub fn total(&self) -> usize {
        self.a + self.b + self.c
    }

    pub fn add(&mut self, branch: Branch) {
        match branch {
            Branch::A => self.a += 1,
            Branch::B => self.b += 1,
            Branch::C => self.c += 1,
        }
    }
}

impl std::ops::AddAssign for BranchCounts {
    fn add_assign(&mut self, o: Self) {
        self.a += o.a;
        self.b += o.b;
        self.c += o.c;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub boxes: Vec<Box3D>,
    /// Input index of each output box.
    pub sources: Vec<usize>,
    /// Branch taken by each input box.
    pub branches: Vec<Branch>,
    pub counts: BranchCounts,
    pub warnings: Vec<String>,
}

fn retain_rejected(b: &Box3D, v: &ReasonerVerdict, cfg: &RefineConfig) -> Option<Box3D> {
    let class = if b.class == ObjectClass::Unknown { v.cls_new } else { b.class };
    let size = cfg.common_sizes.get(class).ok()?;
    let mut out = *b;
    out.set_dims(size);
    out.class = class;
    out.weight *= cfg.downweight_factor;
    Some(out)
}

/// Three-way filter/refine of boxes given aligned verdicts and raw
/// consistency scores.
pub fn refine(
    boxes: &[Box3D],
    verdicts: &[ReasonerVerdict],
    s_cons: &[f64],
    cfg: &RefineConfig,
) -> Result<RefineOutcome, ReasonerError> {
    if boxes.len() != verdicts.len() || boxes.len() != s_cons.len() {
        return Err(ReasonerError::Misaligned { boxes: boxes.len(), verdicts: verdicts.len(), cues: s_cons.len() });
    }
    let mut out = RefineOutcome {
        boxes: Vec::new(),
        sources: Vec::new(),
        branches: Vec::with_capacity(boxes.len()),
        counts: BranchCounts::default(),
        warnings: Vec::new(),
    };
    for (i, ((b, v), &s)) in boxes.iter().zip(verdicts).zip(s_cons).enumerate() {
        let consistent = effective_consistency(s, cfg.invert_s_cons) > cfg.eta;
        let mut result: Option<(Branch, Box3D)> = None;
        let mut check_rejected = !v.keep;
        if v.keep {
            let dims = b.dims();
            let new = [dims[0] + v.delta[0], dims[1] + v.delta[1], dims[2] + v.delta[2]];
            if new.iter().all(|d| d.is_finite() && *d > 0.0) {
                let mut nb = *b;
                nb.set_dims(new);
                nb.class = v.cls_new;
                result = Some((Branch::A, nb));
            } else {
                let msg = format!("box {i}: correction {:?} gives non-positive size {new:?}", v.delta);
                warn!("{msg}");
                out.warnings.push(msg);
                check_rejected = cfg.demote_invalid;
            }
        }
        if result.is_none() && check_rejected && consistent {
            match retain_rejected(b, v, cfg) {
                Some(nb) => result = Some((Branch::B, nb)),
                None => out.warnings.push(format!("box {i}: no common size for its class")),
            }
        }
        match result {
            Some((branch, nb)) => {
                out.boxes.push(nb);
                out.sources.push(i);
                out.branches.push(branch);
                out.counts.add(branch);
            }
            None => {
                out.branches.push(Branch::C);
                out.counts.add(Branch::C);
            }
        }
    }
    Ok(out)
}
