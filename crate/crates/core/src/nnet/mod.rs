//! From-scratch networks: the 1024→31→1 sigmoid region extractor and a small
//! layered CNN with activation taps, plus a finite-difference gradient check.

pub mod cnn;
pub mod mlp;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

pub use cnn::{CnnModel, CnnSpec, LayerSpec};
pub use mlp::{FeatureVector, MlpModel};

/// Version tag written into every checkpoint header.
pub const CHECKPOINT_VERSION: u32 = 1;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// σ'(z) written through σ itself.
#[inline]
pub fn sigmoid_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: RngSeed,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch size must be positive"));
        }
        Ok(())
    }

    pub fn mlp_default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            seed: RngSeed::default(),
        }
    }

    pub fn cnn_default() -> Self {
        Self {
            learning_rate: 0.05,
            ..Self::mlp_default()
        }
    }
}

/// Full-data loss before training (index 0) and after each epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
}

impl TrainHistory {
    pub fn initial(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// A model whose scalar loss on one sample has an analytic gradient over a
/// flat parameter index space.
pub trait Differentiable {
    type Sample: ?Sized;

    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    fn loss(&self, sample: &Self::Sample) -> f64;
    fn loss_and_grad(&self, sample: &Self::Sample) -> (f64, Vec<f64>);
}

/// Smallest number of parameters probed by [`grad_check`].
pub const GRAD_CHECK_MIN_PARAMS: usize = 20;

/// Compares backprop against central differences on a seeded random subset of
/// at least 20 parameters (all of them if the model is smaller) and returns
/// the largest `|g_bp − g_fd| / max(|g_bp| + |g_fd|, 1e-8)`.
pub fn grad_check<M>(model: &M, sample: &M::Sample, step: f64, n_params: usize, seed: RngSeed) -> Result<f64>
where
    M: Differentiable + Clone,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    let total = model.num_params();
    let n = n_params.max(GRAD_CHECK_MIN_PARAMS).min(total);
    let (_, grad) = model.loss_and_grad(sample);
    let mut probe = model.clone();
    let mut rng = seed.rng();
    let mut worst = 0.0f64;
    for i in sample_indices(&mut rng, total, n) {
        let theta = model.param(i);
        probe.set_param(i, theta + step);
        let up = probe.loss(sample);
        probe.set_param(i, theta - step);
        let down = probe.loss(sample);
        probe.set_param(i, theta);
        let fd = (up - down) / (2.0 * step);
        let bp = grad[i];
        let rel = (bp - fd).abs() / (bp.abs() + fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Least-squares linear model; loss is quadratic in every parameter.
    #[derive(Clone)]
    struct Linear {
        w: Vec<f64>,
    }

    impl Differentiable for Linear {
        type Sample = (Vec<f64>, f64);
        fn num_params(&self) -> usize {
            self.w.len()
        }
        fn param(&self, i: usize) -> f64 {
            self.w[i]
        }
        fn set_param(&mut self, i: usize, v: f64) {
            self.w[i] = v;
        }
        fn loss(&self, (x, y): &Self::Sample) -> f64 {
            let r: f64 = self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() - y;
            0.5 * r * r
        }
        fn loss_and_grad(&self, s: &Self::Sample) -> (f64, Vec<f64>) {
            let (x, y) = s;
            let r: f64 = self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() - y;
            (0.5 * r * r, x.iter().map(|x| r * x).collect())
        }
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let model = Linear {
            w: (0..30).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.11).cos()).collect();
        let err = grad_check(&model, &(x, 0.3), 1e-5, 30, RngSeed(1)).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let model = Linear { w: vec![1.0; 3] };
        assert!(grad_check(&model, &(vec![1.0; 3], 0.0), 0.0, 20, RngSeed(1)).is_err());
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) - 0.952_574_126_822_433_1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn sigmoid_derivative_matches_finite_difference(z in -8.0f64..8.0) {
            let h = 1e-5;
            let fd = (sigmoid(z + h) - sigmoid(z - h)) / (2.0 * h);
            prop_assert!((sigmoid_prime(z) - fd).abs() < 1e-9);
        }
    }
}
