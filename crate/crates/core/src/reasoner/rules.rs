use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{ReasonerRequest, ReasonerVerdict};
use crate::cues::{CueRecord, SizePrototypes};
use crate::geometry::ObjectClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    /// Largest relative per-axis deviation from the prototype still
    /// considered plausible.
    pub size_tolerance: BTreeMap<ObjectClass, f64>,
    /// Upper speed for each class (m/s).
    pub max_speed: BTreeMap<ObjectClass, f64>,
    /// Expected surface point density at `reference_range` (points / m^2).
    pub reference_density: f64,
    pub reference_range: f64,
    /// Fraction of the expected point count below which density is implausible.
    pub min_density_fraction: f64,
    /// Absolute floor on the point count of a plausible object.
    pub min_points: usize,
    /// Size deviation, in multiples of the tolerance, beyond which a box is
    /// rejected however dense it is.
    pub reject_deviation: f64,
    /// Share of the gap to the prototype closed by the size correction.
    pub correction_gain: f64,
    /// Per-axis correction cap as a fraction of the current size.
    pub max_correction: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            size_tolerance: BTreeMap::from([
                (ObjectClass::Vehicle, 0.35),
                (ObjectClass::Pedestrian, 0.5),
                (ObjectClass::Cyclist, 0.45),
            ]),
            max_speed: BTreeMap::from([
                (ObjectClass::Vehicle, 40.0),
                (ObjectClass::Pedestrian, 3.0),
                (ObjectClass::Cyclist, 12.0),
            ]),
            reference_density: 50.0,
            reference_range: 10.0,
            min_density_fraction: 0.05,
            min_points: 3,
            reject_deviation: 1.5,
            correction_gain: 0.5,
            max_correction: 0.3,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), String> {
        for class in ObjectClass::KNOWN {
            match self.size_tolerance.get(&class) {
                Some(t) if *t > 0.0 => {}
                _ => return Err(format!("size_tolerance for {class} must be > 0")),
            }
            match self.max_speed.get(&class) {
                Some(v) if *v >= 0.0 => {}
                _ => return Err(format!("max_speed for {class} must be >= 0")),
            }
        }
        if !(self.reference_density > 0.0 && self.reference_range > 0.0) {
            return Err("reference_density and reference_range must be > 0".into());
        }
        if !(self.reject_deviation >= 1.0) {
            return Err("reject_deviation must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.correction_gain) || !(0.0..1.0).contains(&self.max_correction) {
            return Err("correction_gain must be in [0, 1] and max_correction in [0, 1)".into());
        }
        Ok(())
    }

    /// Points expected on the sensor-facing half of a prototype-sized box.
    pub fn expected_points(&self, prototype: [f64; 3], distance: f64) -> f64 {
        let [l, w, h] = prototype;
        let visible_area = l * w + l * h + w * h;
        let falloff = (self.reference_range / distance.max(self.reference_range)).powi(2);
        self.reference_density * visible_area * falloff
    }
}

fn table(value: f64, steps: &[(f64, f64)], otherwise: f64) -> f64 {
    steps.iter().find(|(limit, _)| value <= *limit).map_or(otherwise, |(_, s)| *s)
}

/// Deterministic verdict for one box.
pub fn rule_verdict(cue: &CueRecord, prototypes: &SizePrototypes, rules: &RuleConfig) -> ReasonerVerdict {
    let dims = cue.bbox.dims();
    let (class, proto) = prototypes.nearest(dims).unwrap_or((ObjectClass::Vehicle, [4.7, 1.9, 1.7]));
    let deviation = (0..3).map(|k| (dims[k] - proto[k]).abs() / proto[k]).fold(0.0, f64::max);
    let tolerance = rules.size_tolerance.get(&class).copied().unwrap_or(0.35);
    let expected = rules.expected_points(proto, cue.distance);
    let density_ok = cue.point_count >= rules.min_points
        && cue.point_count as f64 >= rules.min_density_fraction * expected;
    let speed_ok = cue.speed <= rules.max_speed.get(&class).copied().unwrap_or(f64::INFINITY);

    let size_score = table(deviation / tolerance, &[(0.5, 1.0), (1.0, 0.7), (2.0, 0.3)], 0.0);
    let ratio = cue.point_count as f64 / expected.max(1e-9);
    let density_score = if cue.point_count == 0 {
        0.0
    } else if ratio >= 0.5 {
        1.0
    } else if density_ok {
        0.6
    } else {
        0.3
    };
    let motion_score = if speed_ok { 1.0 } else { 0.0 };
    let s_rea = 0.5 * size_score + 0.3 * density_score + 0.2 * motion_score;

    let keep = !(deviation > tolerance && !density_ok) && deviation <= rules.reject_deviation * tolerance;
    let delta = if keep {
        let mut d = [0.0; 3];
        for k in 0..3 {
            let cap = rules.max_correction * dims[k];
            d[k] = (rules.correction_gain * (proto[k] - dims[k])).clamp(-cap, cap);
        }
        d
    } else {
        [0.0; 3]
    };
    ReasonerVerdict { keep, s_rea, delta, cls_new: class }
}

pub fn reason_rule_based(req: &ReasonerRequest, prototypes: &SizePrototypes, rules: &RuleConfig) -> Vec<ReasonerVerdict> {
    req.cues.iter().map(|c| rule_verdict(c, prototypes, rules)).collect()
}
