//! Two-layer sigmoid network used as the per-region feature extractor.
//!
//! The hidden layer's 31 activations are the region's feature vector; the
//! single output unit is trained against the sample label with the logistic
//! cross-entropy cost.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Differentiable, TrainConfig, TrainHistory, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

pub const INPUT_DIM: usize = 1024;
pub const HIDDEN_DIM: usize = 31;

/// Probabilities are clamped to `[LOSS_EPS, 1 − LOSS_EPS]` before the log.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::validation(format!("feature value {v} outside (0,1)")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden_dim: usize,
    /// hidden_dim × input_dim, row-major
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    seed: RngSeed,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: RngSeed) -> Self {
        let mut rng = seed.rng();
        let mut uniform = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w1 = uniform(input_dim, hidden_dim, hidden_dim * input_dim);
        let w2 = uniform(hidden_dim, 1, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: 0.0,
            seed,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
            seed: RngSeed(0),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn set_output_layer(&mut self, w2: Vec<f64>, b2: f64) -> Result<()> {
        if w2.len() != self.hidden_dim {
            return Err(Error::shape("output weight length"));
        }
        self.w2 = w2;
        self.b2 = b2;
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape(format!(
                "extractor input has {} entries, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| sigmoid(dot(row, x) + b))
            .collect()
    }

    /// Hidden activations and output probability.
    pub fn forward(&self, x: &[f64]) -> Result<(FeatureVector, f64)> {
        self.check_input(x)?;
        let h = self.hidden(x);
        let out = sigmoid(dot(&self.w2, &h) + self.b2);
        Ok((FeatureVector(h), out))
    }

    /// The hidden-layer feature vector.
    pub fn extract(&self, x: &[f64]) -> Result<FeatureVector> {
        self.check_input(x)?;
        Ok(FeatureVector(self.hidden(x)))
    }

    /// Loss and gradient for one sample, accumulated into `grad` with the
    /// layout `[w1, b1, w2, b2]`.
    fn accumulate(&self, x: &[f64], label: f64, grad: &mut [f64]) -> f64 {
        let h = self.hidden(x);
        let out = sigmoid(dot(&self.w2, &h) + self.b2);
        let dz2 = out - label;
        let (gw1, rest) = grad.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.hidden_dim);
        let (gw2, gb2) = rest.split_at_mut(self.hidden_dim);
        gb2[0] += dz2;
        for j in 0..self.hidden_dim {
            gw2[j] += dz2 * h[j];
            let dz1 = dz2 * self.w2[j] * h[j] * (1.0 - h[j]);
            gb1[j] += dz1;
            let row = &mut gw1[j * self.input_dim..(j + 1) * self.input_dim];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dz1 * xi;
            }
        }
        mlp_loss(out, label)
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        let mut it = grad.iter();
        for p in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
        {
            *p -= lr * it.next().expect("gradient layout");
        }
    }

    /// Mean loss over a labelled set.
    pub fn mean_loss(&self, data: &[(Vec<f64>, f64)]) -> f64 {
        data.iter()
            .map(|(x, y)| {
                let out = sigmoid(dot(&self.w2, &self.hidden(x)) + self.b2);
                mlp_loss(out, *y)
            })
            .sum::<f64>()
            / data.len() as f64
    }

    pub fn accuracy(&self, data: &[(Vec<f64>, f64)]) -> f64 {
        let correct = data
            .iter()
            .filter(|(x, y)| {
                let out = sigmoid(dot(&self.w2, &self.hidden(x)) + self.b2);
                (out >= 0.5) == (*y >= 0.5)
            })
            .count();
        correct as f64 / data.len() as f64
    }

    /// One full-batch gradient-descent step.
    pub fn full_batch_step(&mut self, data: &[(Vec<f64>, f64)], lr: f64) {
        let mut grad = vec![0.0; self.num_params()];
        for (x, y) in data {
            self.accumulate(x, *y, &mut grad);
        }
        let n = data.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        self.step(&grad, lr);
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format_version: CHECKPOINT_VERSION,
            kind: "mlp".into(),
            seed: self.seed,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w1: self.w1.chunks(self.input_dim).map(<[f64]>::to_vec).collect(),
            b1: self.b1.clone(),
            w2: vec![self.w2.clone()],
            b2: self.b2,
        }
    }

    pub fn from_checkpoint(c: MlpCheckpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_VERSION || c.kind != "mlp" {
            return Err(Error::validation(format!(
                "not an mlp checkpoint (kind `{}`, version {})",
                c.kind, c.format_version
            )));
        }
        let w1: Vec<f64> = c.w1.into_iter().flatten().collect();
        let w2: Vec<f64> = c.w2.into_iter().flatten().collect();
        if w1.len() != c.input_dim * c.hidden_dim || c.b1.len() != c.hidden_dim || w2.len() != c.hidden_dim {
            return Err(Error::shape("mlp checkpoint parameter shapes"));
        }
        let model = Self {
            input_dim: c.input_dim,
            hidden_dim: c.hidden_dim,
            w1,
            b1: c.b1,
            w2,
            b2: c.b2,
            seed: c.seed,
        };
        if !(0..model.num_params()).all(|i| model.param(i).is_finite()) {
            return Err(Error::validation("non-finite parameter in checkpoint"));
        }
        Ok(model)
    }
}

/// On-disk form: header fields followed by nested parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format_version: u32,
    pub kind: String,
    pub seed: RngSeed,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: f64,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic cross-entropy `−[y ln p + (1−y) ln(1−p)]` with `p` clamped.
pub fn mlp_loss(out: f64, label: f64) -> f64 {
    let p = out.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

pub fn mlp_init(seed: RngSeed) -> MlpModel {
    MlpModel::init(INPUT_DIM, HIDDEN_DIM, seed)
}

/// Mini-batch gradient descent on the mean cross-entropy. Labels are 0/1.
pub fn mlp_train(data: &[(Vec<f64>, f64)], cfg: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    let input_dim = data.first().map(|(x, _)| x.len()).unwrap_or(INPUT_DIM);
    mlp_train_from(MlpModel::init(input_dim, HIDDEN_DIM, cfg.seed), data, cfg)
}

pub fn mlp_train_from(
    mut model: MlpModel,
    data: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    for (x, y) in data {
        model.check_input(x)?;
        if *y != 0.0 && *y != 1.0 {
            return Err(Error::validation(format!("label {y} is not 0 or 1")));
        }
    }
    let mut rng = cfg.seed.stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut history = TrainHistory {
        losses: vec![model.mean_loss(data)],
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                model.accumulate(&data[i].0, data[i].1, &mut grad);
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            model.step(&grad, cfg.learning_rate);
        }
        history.losses.push(model.mean_loss(data));
    }
    Ok((model, history))
}

impl Differentiable for MlpModel {
    type Sample = (Vec<f64>, f64);

    fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn param(&self, i: usize) -> f64 {
        let (n1, n2) = (self.w1.len(), self.hidden_dim);
        match i {
            i if i < n1 => self.w1[i],
            i if i < n1 + n2 => self.b1[i - n1],
            i if i < n1 + 2 * n2 => self.w2[i - n1 - n2],
            _ => self.b2,
        }
    }

    fn set_param(&mut self, i: usize, v: f64) {
        let (n1, n2) = (self.w1.len(), self.hidden_dim);
        match i {
            i if i < n1 => self.w1[i] = v,
            i if i < n1 + n2 => self.b1[i - n1] = v,
            i if i < n1 + 2 * n2 => self.w2[i - n1 - n2] = v,
            _ => self.b2 = v,
        }
    }

    fn loss(&self, (x, y): &Self::Sample) -> f64 {
        mlp_loss(sigmoid(dot(&self.w2, &self.hidden(x)) + self.b2), *y)
    }

    fn loss_and_grad(&self, (x, y): &Self::Sample) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let loss = self.accumulate(x, *y, &mut grad);
        (loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::grad_check;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, dim: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
        let mut rng = RngSeed(seed).rng();
        let noise = Normal::new(0.0, 0.15).unwrap();
        (0..n)
            .map(|i| {
                let y = (i % 2) as f64;
                let center: f64 = if y == 1.0 { 0.6 } else { 0.4 };
                let x = (0..dim)
                    .map(|_| (center + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = mlp_init(RngSeed(5));
        let b = mlp_init(RngSeed(5));
        assert_eq!(a, b);
        let bound = (6.0f64 / 1055.0).sqrt();
        assert!((bound - 0.0754).abs() < 1e-4);
        assert!(a.w1().iter().all(|w| w.abs() <= bound));
        assert!(a.b1().iter().all(|&b| b == 0.0));
        assert_eq!(a.b2(), 0.0);
        assert_ne!(a, mlp_init(RngSeed(6)));
    }

    #[test]
    fn forward_cases() {
        let zero = MlpModel::zeros(INPUT_DIM, HIDDEN_DIM);
        let x = vec![0.7; INPUT_DIM];
        let (h, out) = zero.forward(&x).unwrap();
        assert_eq!(h.len(), 31);
        assert!(h.values().iter().all(|&v| v == 0.5));
        assert_eq!(out, 0.5);

        let mut m = mlp_init(RngSeed(1));
        m.set_output_layer(vec![0.0; HIDDEN_DIM], 3.0).unwrap();
        let (_, out) = m.forward(&x).unwrap();
        assert!((out - 0.952_574_126_822_433).abs() < 1e-12);

        assert!(matches!(m.forward(&[0.0; 10]), Err(Error::Shape(_))));
        assert!(matches!(m.extract(&[0.0; 10]), Err(Error::Shape(_))));
    }

    #[test]
    fn extract_is_hidden_layer() {
        let m = mlp_init(RngSeed(9));
        let x: Vec<f64> = (0..INPUT_DIM).map(|i| (i % 17) as f64 / 16.0).collect();
        let f = m.extract(&x).unwrap();
        assert_eq!(f, m.forward(&x).unwrap().0);
        assert!(f.values().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(MlpModel::zeros(INPUT_DIM, HIDDEN_DIM)
            .extract(&x)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((mlp_loss(0.5, 1.0) - ln2).abs() < 1e-15);
        assert!((mlp_loss(0.5, 0.0) - ln2).abs() < 1e-15);
        assert!((mlp_loss(0.9, 1.0) - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(mlp_loss(0.0, 1.0).is_finite());
        assert!(mlp_loss(1.0, 0.0).is_finite());
    }

    #[test]
    fn memorizes_single_sample() {
        let data = vec![(vec![0.3; INPUT_DIM], 1.0)];
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 2000,
            batch_size: 1,
            seed: RngSeed(3),
        };
        let (m, hist) = mlp_train(&data, &cfg).unwrap();
        assert!(hist.last() < 1e-3, "{}", hist.last());
        assert!(m.mean_loss(&data) < 1e-3);
    }

    #[test]
    fn separates_gaussian_blobs() {
        let data = blobs(200, INPUT_DIM, 17);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            seed: RngSeed(4),
        };
        let (m, hist) = mlp_train(&data, &cfg).unwrap();
        assert!(hist.last() <= hist.initial());
        assert!(m.accuracy(&data) >= 0.98, "{}", m.accuracy(&data));
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(40, INPUT_DIM, 2);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::mlp_default()
        };
        let a = mlp_train(&data, &cfg).unwrap();
        let b = mlp_train(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_training_input() {
        let cfg = TrainConfig::mlp_default();
        assert!(matches!(mlp_train(&[], &cfg), Err(Error::Validation(_))));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        assert!(mlp_train(&blobs(4, 8, 1), &bad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = mlp_init(RngSeed(21));
        let x: Vec<f64> = (0..INPUT_DIM).map(|i| ((i * 7) % 13) as f64 / 12.0).collect();
        let err = grad_check(&m, &(x, 1.0), 1e-5, 40, RngSeed(2)).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn small_lr_step_never_increases_loss() {
        for seed in 0..50 {
            let data = blobs(16, 64, 100 + seed);
            let mut m = MlpModel::init(64, HIDDEN_DIM, RngSeed(seed));
            let before = m.mean_loss(&data);
            m.full_batch_step(&data, 1e-4);
            assert!(m.mean_loss(&data) <= before, "seed {seed}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = mlp_init(RngSeed(8));
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = MlpModel::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
