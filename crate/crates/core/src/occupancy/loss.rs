use super::OccupancyError;

/// Probability clamp applied inside the loss.
pub const LOSS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    /// d loss / d prediction, one entry per voxel of the domain.
    pub grad: Vec<f64>,
}

/// Mean binary cross-entropy over the prediction domain with its analytic
/// gradient. Predictions are clamped to `[1e-7, 1 - 1e-7]`; the gradient is
/// that of the clamped loss (zero where the clamp is active).
pub fn occupancy_loss(pred: &[f64], targets: &[f64]) -> Result<LossWithGrad, OccupancyError> {
    if pred.is_empty() {
        return Err(OccupancyError::EmptyDomain);
    }
    if pred.len() != targets.len() {
        return Err(OccupancyError::Param(format!(
            "{} predictions for {} targets",
            pred.len(),
            targets.len()
        )));
    }
    if let Some(i) = pred.iter().position(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(OccupancyError::PredictionOutOfRange { index: i, value: pred[i] });
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(targets) {
        let q = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
        loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        let active = p > LOSS_CLAMP && p < 1.0 - LOSS_CLAMP;
        grad.push(if active { -(y / q - (1.0 - y) / (1.0 - q)) / n } else { 0.0 });
    }
    Ok(LossWithGrad { loss: loss / n, grad })
}
