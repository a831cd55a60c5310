use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::loss::{occupancy_loss, LossWithGrad};
use super::OccupancyError;

/// Two-layer scorer: `sigmoid(w2 . tanh(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPredictor {
    pub inputs: usize,
    pub hidden: usize,
    /// Row-major `hidden x inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Output clamp keeping the probability strictly inside (0, 1).
const PROB_EPS: f64 = 1e-12;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl OccupancyPredictor {
    /// Glorot-uniform initialization.
    pub fn new(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let u1 = Uniform::new_inclusive(-a1, a1).expect("finite bounds");
        let u2 = Uniform::new_inclusive(-a2, a2).expect("finite bounds");
        Self {
            inputs,
            hidden,
            w1: (0..inputs * hidden).map(|_| u1.sample(&mut rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| u2.sample(&mut rng)).collect(),
            b2: 0.0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// All parameters flattened as `[w1, b1, w2, b2]`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), OccupancyError> {
        if params.len() != self.parameter_count() {
            return Err(OccupancyError::Param(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
        Ok(())
    }

    /// Hidden activations `tanh(W1 x + b1)`.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.inputs..(h + 1) * self.inputs];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h]).tanh()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let a = self.embed(x);
        let z: f64 = a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
        sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Mean BCE over `(xs, ys)` and its gradient w.r.t. every parameter, in
    /// the order of [`OccupancyPredictor::parameters`].
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<(f64, Vec<f64>), OccupancyError> {
        let n_in = self.inputs;
        let acts: Vec<Vec<f64>> = xs.iter().map(|x| self.embed(x)).collect();
        let preds: Vec<f64> = acts
            .iter()
            .map(|a| {
                let z: f64 = a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
                sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)
            })
            .collect();
        let LossWithGrad { loss, grad } = occupancy_loss(&preds, ys)?;
        let mut g = vec![0.0; self.parameter_count()];
        let (gw1, rest) = g.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.b1.len());
        let (gw2, gb2) = rest.split_at_mut(self.w2.len());
        for ((x, a), (&yhat, &dl_dy)) in xs.iter().zip(&acts).zip(preds.iter().zip(&grad)) {
            let dz = dl_dy * yhat * (1.0 - yhat);
            gb2[0] += dz;
            for h in 0..self.hidden {
                gw2[h] += dz * a[h];
                let da = dz * self.w2[h] * (1.0 - a[h] * a[h]);
                gb1[h] += da;
                let row = &mut gw1[h * n_in..(h + 1) * n_in];
                for (gw, v) in row.iter_mut().zip(x) {
                    *gw += da * v;
                }
            }
        }
        Ok((loss, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|i| (0..5).map(|j| (((i * 7 + j * 3) % 5) as f64 - 2.0) * 0.3).collect())
            .collect();
        let ys = (0..12).map(|i| f64::from(i % 3 == 0)).collect();
        (xs, ys)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = OccupancyPredictor::new(5, 4, 3);
        let (xs, ys) = toy_data();
        let (_, g) = p.loss_and_gradient(&xs, &ys).unwrap();
        let base = p.parameters();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut q = p.clone();
            let mut plus = base.clone();
            plus[k] += h;
            q.set_parameters(&plus).unwrap();
            let (lp, _) = q.loss_and_gradient(&xs, &ys).unwrap();
            let mut minus = base.clone();
            minus[k] -= h;
            q.set_parameters(&minus).unwrap();
            let (lm, _) = q.loss_and_gradient(&xs, &ys).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let mut p = OccupancyPredictor::new(3, 2, 0);
        let big = vec![1e3; p.parameter_count()];
        p.set_parameters(&big).unwrap();
        let y = p.predict(&[1.0, 1.0, 1.0]);
        assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn initialization_is_seeded() {
        assert_eq!(OccupancyPredictor::new(27, 8, 9), OccupancyPredictor::new(27, 8, 9));
        assert_ne!(OccupancyPredictor::new(27, 8, 9), OccupancyPredictor::new(27, 8, 10));
    }

    #[test]
    fn wrong_parameter_count_rejected() {
        let mut p = OccupancyPredictor::new(3, 2, 0);
        assert!(p.set_parameters(&[0.0; 3]).is_err());
    }
}
