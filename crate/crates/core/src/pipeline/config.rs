use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{CorruptionSpec, SceneSpec};
use crate::clustering::LabelParams;
use crate::cues::{CueConfig, SizePrototypes};
use crate::ground::GroundParams;
use crate::occupancy::{MaskSchedule, WarmupConfig};
use crate::reasoner::{IcrConfig, RefineConfig, RemoteConfig, RuleConfig};
use crate::selftrain::{SelfTrainConfig, ToyDetectorConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("configuration is not valid TOML: {0}")]
    Syntax(String),
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
}

impl ConfigError {
    /// Offending keys, for reporting.
    pub fn keys(&self) -> Vec<String> {
        match self {
            ConfigError::UnknownKeys(k) => k.clone(),
            ConfigError::Invalid(msgs) => msgs.iter().map(|m| m.split(':').next().unwrap_or(m).to_string()).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionParams {
    /// Neighborhood radius of the persistence score (meters).
    pub radius: f64,
    /// Context points scoring below this are removed.
    pub tau: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self { radius: 0.3, tau: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Toy,
    PassThrough,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    /// Copy the warm-up predictor into the detector before the first round.
    pub warm_start: bool,
    pub toy: ToyDetectorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub thresholds: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { thresholds: crate::bench::DEFAULT_THRESHOLDS.to_vec() }
    }
}

/// Every tunable of the pipeline. Module seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub corruption: CorruptionSpec,
    pub motion: MotionParams,
    pub ground: GroundParams,
    pub labels: LabelParams,
    pub mask: MaskSchedule,
    pub warmup: WarmupConfig,
    pub cues: CueConfig,
    pub refine: RefineConfig,
    pub prototypes: SizePrototypes,
    pub rules: RuleConfig,
    pub remote: RemoteConfig,
    pub detector: DetectorSection,
    pub selftrain: SelfTrainConfig,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 7,
            scene: SceneSpec { frames: 6, ego_speed: 2.0, ..SceneSpec::default() },
            corruption: CorruptionSpec::default(),
            motion: MotionParams::default(),
            ground: GroundParams::default(),
            labels: LabelParams::default(),
            mask: MaskSchedule::default(),
            warmup: WarmupConfig::default(),
            cues: CueConfig::default(),
            refine: RefineConfig::default(),
            prototypes: SizePrototypes::default(),
            rules: RuleConfig::default(),
            remote: RemoteConfig::default(),
            detector: DetectorSection { warm_start: true, ..Default::default() },
            selftrain: SelfTrainConfig::default(),
            eval: EvalSection::default(),
        };
        cfg.derive_seeds();
        cfg
    }
}

/// Keys whose tables hold free-form entries or optional values absent from
/// the serialized defaults.
const OPEN_TABLES: [&str; 3] = ["prototypes", "refine.common_sizes", "corruption.confusion"];
const OPTIONAL_KEYS: [&str; 3] = ["remote.endpoint", "remote.model", "remote.log_path"];

fn collect_unknown(user: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    let (toml::Value::Table(u), toml::Value::Table(k)) = (user, known) else { return };
    for (key, value) in u {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        if OPEN_TABLES.contains(&path.as_str()) {
            continue;
        }
        match k.get(key) {
            Some(kv) => collect_unknown(value, kv, &path, out),
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => out.push(path),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML, listing every unknown key and every invalid value.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let known = toml::Value::try_from(Self::default()).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut unknown = Vec::new();
        collect_unknown(&user, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let mut cfg: Self = user.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(vec![e.to_string()]))?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the master seed and every module seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.derive_seeds();
    }

    fn derive_seeds(&mut self) {
        self.scene.seed = self.seed;
        self.mask.seed = self.seed.wrapping_add(1);
        self.ground.seed = self.seed.wrapping_add(2);
        self.detector.toy.seed = self.seed.wrapping_add(3);
    }

    /// Seed for label corruption.
    pub fn corruption_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    pub fn icr(&self) -> IcrConfig {
        IcrConfig { cues: self.cues.clone(), refine: self.refine.clone(), prototypes: self.prototypes.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad = Vec::new();
        let mut check = |section: &str, r: Result<(), String>| {
            if let Err(e) = r {
                bad.push(format!("{section}: {e}"));
            }
        };
        check("scene", self.scene.validate().map_err(|e| e.to_string()));
        check("corruption", self.corruption.validate().map_err(|e| e.to_string()));
        check(
            "motion",
            if self.motion.radius > 0.0 && (0.0..=1.0).contains(&self.motion.tau) {
                Ok(())
            } else {
                Err("radius must be > 0 and tau in [0, 1]".into())
            },
        );
        let g = &self.ground;
        check(
            "ground",
            if g.inlier_distance > 0.0 && g.max_iterations > 0 && (0.0..=90.0).contains(&g.max_tilt_deg)
                && (0.0..=1.0).contains(&g.min_inlier_fraction)
            {
                Ok(())
            } else {
                Err("inlier_distance, max_iterations, max_tilt_deg or min_inlier_fraction out of range".into())
            },
        );
        check("labels", self.labels.clustering.validate().map_err(|e| e.to_string()));
        check(
            "labels",
            if (0.0..=1.0).contains(&self.labels.nms_iou) && self.labels.score_reference > 0.0 {
                Ok(())
            } else {
                Err("nms_iou must be in [0, 1] and score_reference > 0".into())
            },
        );
        check("mask", self.mask.validate().map_err(|e| e.to_string()));
        check("warmup", self.warmup.validate().map_err(|e| e.to_string()));
        check("cues", self.cues.validate().map_err(|e| e.to_string()));
        check("refine", self.refine.validate());
        check("prototypes", self.prototypes.validate().map_err(|e| e.to_string()));
        check("rules", self.rules.validate());
        check("remote", self.remote.validate());
        let t = &self.detector.toy;
        check(
            "detector.toy",
            if t.voxel_size > 0.0
                && t.hidden > 0
                && t.epochs > 0
                && t.learning_rate > 0.0
                && (0.0..=1.0).contains(&t.score_threshold)
                && (0.0..=1.0).contains(&t.nms_iou)
                && t.background_iou <= t.match_iou
                && t.background_weight >= 0.0
            {
                Ok(())
            } else {
                Err("voxel_size, hidden, epochs, learning_rate, thresholds or background_weight out of range".into())
            },
        );
        check("detector.toy.proposals", t.proposals.clustering.validate().map_err(|e| e.to_string()));
        check(
            "detector.toy.hidden",
            if self.detector.warm_start && t.hidden != self.warmup.hidden {
                Err(format!("{} differs from warmup.hidden {} with warm_start enabled", t.hidden, self.warmup.hidden))
            } else {
                Ok(())
            },
        );
        check("selftrain", self.selftrain.validate().map_err(|e| e.to_string()));
        check(
            "eval.thresholds",
            if !self.eval.thresholds.is_empty() && self.eval.thresholds.iter().all(|t| *t > 0.0 && *t <= 1.0) {
                Ok(())
            } else {
                Err("need at least one threshold in (0, 1]".into())
            },
        );
        let dup: BTreeSet<String> = bad.iter().cloned().collect();
        if dup.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(dup.into_iter().collect()))
        }
    }
}
