use serde::{Deserialize, Serialize};

use super::SelfTrainError;
use crate::geometry::{wrap_angle, Box3D, ObjectClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the consistency score in the sample weight.
    pub lambda1: f64,
    /// Weight of the reasoning score in the sample weight.
    pub lambda2: f64,
    /// Regression term weight.
    pub alpha_reg: f64,
    /// Classification term weight.
    pub beta_cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, alpha_reg: 1.0, beta_cls: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        let all = [self.lambda1, self.lambda2, self.alpha_reg, self.beta_cls];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SelfTrainError::Param("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConstants {
    /// Smooth-L1 knee.
    pub delta: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Focal balance factor.
    pub alpha_balance: f64,
}

impl Default for LossConstants {
    fn default() -> Self {
        Self { delta: 1.0, gamma: 2.0, alpha_balance: 0.25 }
    }
}

/// `omega = lambda1 * s_cons + lambda2 * s_rea`.
pub fn sample_weight(s_cons: f64, s_rea: f64, w: &LossWeights) -> Result<f64, SelfTrainError> {
    if !(s_cons >= 0.0 && s_rea >= 0.0) {
        return Err(SelfTrainError::Param(format!("scores must be >= 0, got ({s_cons}, {s_rea})")));
    }
    Ok(w.lambda1 * s_cons + w.lambda2 * s_rea)
}

/// Summed smooth-L1 over the residual components, with its gradient.
pub fn smooth_l1(residual: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let grad = residual
        .iter()
        .map(|&x| {
            if x.abs() < delta {
                value += 0.5 * x * x / delta;
                x / delta
            } else {
                value += x.abs() - 0.5 * delta;
                x.signum()
            }
        })
        .collect();
    (value, grad)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `-alpha (1 - p_t)^gamma ln p_t` over softmax probabilities, with its
/// gradient with respect to the logits.
pub fn focal_loss(logits: &[f64], target: usize, gamma: f64, alpha_balance: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let lpt = logp[target];
    let pt = lpt.exp();
    let q = 1.0 - pt;
    let value = -alpha_balance * q.powf(gamma) * lpt;
    // dL/dz_j = alpha [gamma q^(gamma-1) p_t ln p_t - q^gamma] (delta_tj - p_j)
    let first = if gamma == 0.0 || q <= 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * pt * lpt };
    let coef = alpha_balance * (first - q.powf(gamma));
    let grad = logp
        .iter()
        .enumerate()
        .map(|(j, lp)| coef * (f64::from(u8::from(j == target)) - lp.exp()))
        .collect();
    (value, grad)
}

pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    -log_softmax(logits)[target]
}

/// Regression encoding `(x, y, z, ln l, ln w, ln h, sin yaw, cos yaw)`.
pub fn encode_box(b: &Box3D) -> [f64; 8] {
    let (s, c) = b.yaw.sin_cos();
    [b.x, b.y, b.z, b.l.ln(), b.w.ln(), b.h.ln(), s, c]
}

pub fn decode_box(e: &[f64; 8], class: ObjectClass) -> Box3D {
    Box3D::new([e[0], e[1], e[2]], [e[3].exp(), e[4].exp(), e[5].exp()], wrap_angle(e[6].atan2(e[7])), class)
}

/// Class index used by the detector heads: 0 is background.
pub fn class_slot(class: ObjectClass) -> usize {
    class.index() + 1
}

pub fn slot_class(slot: usize) -> Option<ObjectClass> {
    slot.checked_sub(1).and_then(ObjectClass::from_index)
}

/// Number of classification slots (background plus every class).
pub const CLASS_SLOTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Encoded box, see [`encode_box`].
    pub regression: [f64; 8],
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub target: Box3D,
    /// Classification target slot (0 = background).
    pub class_slot: usize,
    pub prediction: Prediction,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub regression: [f64; 8],
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub gradients: Vec<SampleGradient>,
}

/// `(1 / N) sum_i omega_i [alpha L_reg + beta L_cls]` with per-sample
/// gradients with respect to each prediction.
pub fn total_loss(samples: &[WeightedSample], w: &LossWeights, k: &LossConstants) -> Result<TotalLoss, SelfTrainError> {
    if samples.is_empty() {
        return Err(SelfTrainError::EmptyBatch);
    }
    let n = samples.len() as f64;
    let mut value = 0.0;
    let mut gradients = Vec::with_capacity(samples.len());
    for s in samples {
        let target = encode_box(&s.target);
        let residual: Vec<f64> = (0..8).map(|i| s.prediction.regression[i] - target[i]).collect();
        let (reg, g_reg) = smooth_l1(&residual, k.delta);
        let (cls, g_cls) = focal_loss(&s.prediction.logits, s.class_slot, k.gamma, k.alpha_balance);
        value += s.omega * (w.alpha_reg * reg + w.beta_cls * cls);
        let sr = s.omega * w.alpha_reg / n;
        let sc = s.omega * w.beta_cls / n;
        let mut regression = [0.0; 8];
        for i in 0..8 {
            regression[i] = sr * g_reg[i];
        }
        gradients.push(SampleGradient { regression, logits: g_cls.iter().map(|g| sc * g).collect() });
    }
    Ok(TotalLoss { value: value / n, gradients })
}
