use serde::{Deserialize, Serialize};

use crate::cues::CueRecord;
use crate::geometry::ObjectClass;

/// Identifier of the bundled prompt template.
pub const TEMPLATE_ID: &str = "cue-reasoner-v1";
pub(crate) const TEMPLATE: &str = include_str!("../../assets/cue_reasoner_v1.txt");

/// Boxes of one frame with their cues, as handed to a reasoner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub template_id: String,
    pub frame_id: u32,
    pub sensor_range: f64,
    pub cues: Vec<CueRecord>,
}

impl ReasonerRequest {
    pub fn new(frame_id: u32, sensor_range: f64, cues: Vec<CueRecord>) -> Self {
        Self { template_id: TEMPLATE_ID.to_string(), frame_id, sensor_range, cues }
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonerVerdict {
    /// Keep mask `m_k`.
    pub keep: bool,
    /// Plausibility `s_rea` in `[0, 1]`.
    pub s_rea: f64,
    /// Additive size correction `(dl, dw, dh)`.
    pub delta: [f64; 3],
    pub cls_new: ObjectClass,
}

impl ReasonerVerdict {
    /// Checks the verdict invariants against the box it refers to.
    pub fn check(&self, dims: [f64; 3]) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.s_rea) {
            return Err(format!("score {} outside [0, 1]", self.s_rea));
        }
        if self.delta.iter().any(|d| !d.is_finite()) {
            return Err("non-finite size correction".into());
        }
        if self.keep && (0..3).any(|k| !(dims[k] + self.delta[k] > 0.0)) {
            return Err(format!("correction {:?} makes sizes {dims:?} non-positive", self.delta));
        }
        Ok(())
    }
}

/// Which reasoner produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Rules,
    NoOp,
    Remote,
    Replay,
    /// Remote or replay failed for this box; the rule table answered.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcedVerdict {
    pub verdict: ReasonerVerdict,
    pub source: VerdictSource,
}

/// Renders the prompt for one batch of cue records.
pub fn render_prompt(frame_id: u32, sensor_range: f64, cues: &[CueRecord], prototypes: &[(ObjectClass, [f64; 3])]) -> String {
    let boxes: Vec<String> = cues
        .iter()
        .map(|c| {
            format!(
                "id={} class={} size={:.2}x{:.2}x{:.2} speed={:.2} points={} intensity={:.3} distance={:.1} s_dis={:.3} s_cons={:.3}",
                c.box_index,
                c.bbox.class,
                c.bbox.l,
                c.bbox.w,
                c.bbox.h,
                c.speed,
                c.point_count,
                c.mean_intensity,
                c.distance,
                c.s_dis,
                c.s_cons
            )
        })
        .collect();
    let protos: Vec<String> = prototypes
        .iter()
        .map(|(c, s)| format!("{c}: {:.2} x {:.2} x {:.2}", s[0], s[1], s[2]))
        .collect();
    TEMPLATE
        .replace("{{frame_id}}", &frame_id.to_string())
        .replace("{{sensor_range}}", &format!("{sensor_range:.0}"))
        .replace("{{boxes}}", &boxes.join("\n"))
        .replace("{{prototypes}}", &protos.join("\n"))
}
