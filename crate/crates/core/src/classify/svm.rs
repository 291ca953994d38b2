//! Soft-margin binary SVM trained by sequential minimal optimization.
//!
//! The dual `min ½αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `yᵀα = 0` is solved by
//! repeatedly optimizing the maximal-violating pair (first-order working-set
//! selection). Training stops once the KKT gap `m(α) − M(α)` falls below the
//! tolerance, so every training point satisfies its KKT condition to `tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::CHECKPOINT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects an RBF kernel with `gamma = 1/dimension`.
    pub kernel: Option<Kernel>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: None,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format_version: u32,
    pub kind: String,
    pub kernel: Kernel,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `y_i · α_i` for each support vector.
    pub alphas: Vec<f64>,
    pub bias: f64,
    /// Dual iterations used; `converged` is false if `max_iter` was hit.
    pub iterations: usize,
    pub converged: bool,
}

/// Full training-set dual state, kept for auditing.
#[derive(Debug, Clone)]
pub struct SvmSolution {
    pub model: SvmModel,
    /// Unsigned multipliers for every training point.
    pub alpha: Vec<f64>,
    pub objective: f64,
}

pub fn svm_train(xs: &[Vec<f64>], ys: &[f64], params: &SvmParams) -> Result<SvmModel> {
    Ok(svm_solve(xs, ys, params)?.model)
}

pub fn svm_solve(xs: &[Vec<f64>], ys: &[f64], params: &SvmParams) -> Result<SvmSolution> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::shape(format!("{n} vectors but {} labels", ys.len())));
    }
    if ys.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::validation("labels must be -1 or +1"));
    }
    if !ys.contains(&1.0) || !ys.contains(&-1.0) {
        return Err(Error::validation("SVM training needs samples of both classes"));
    }
    let dim = xs[0].len();
    if dim == 0 || xs.iter().any(|x| x.len() != dim) {
        return Err(Error::shape("training vectors differ in length"));
    }
    if !(params.c > 0.0) || !(params.tol > 0.0) {
        return Err(Error::validation("C and tol must be positive"));
    }
    let kernel = params.kernel.unwrap_or(Kernel::Rbf { gamma: 1.0 / dim as f64 });
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0) {
            return Err(Error::validation("RBF gamma must be positive"));
        }
    }
    let c = params.c;

    let k: Vec<f64> = {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&xs[i], &xs[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    };
    let q = |i: usize, j: usize| ys[i] * ys[j] * k[i * n + j];

    let mut alpha = vec![0.0; n];
    // gradient of the dual objective: G = Qα − e
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let mut i_sel = None;
        let mut m_up = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -ys[t] * grad[t];
            if in_up(alpha[t], ys[t]) && v > m_up {
                m_up = v;
                i_sel = Some(t);
            }
            if in_low(alpha[t], ys[t]) && v < m_low {
                m_low = v;
                j_sel = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            converged = true;
            break;
        };
        if m_up - m_low < params.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // move along y_i·d_i = −y_j·d_j, keeping yᵀα fixed
        let (yi, yj) = (ys[i], ys[j]);
        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        let step = (m_up - m_low) / quad;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        // α_i += y_i·t, α_j −= y_j·t, with t clipped to the box
        let (lo_i, hi_i) = if yi > 0.0 { (-old_i, c - old_i) } else { (old_i - c, old_i) };
        let (lo_j, hi_j) = if yj > 0.0 { (old_j - c, old_j) } else { (-old_j, c - old_j) };
        let t = step.min(hi_i).min(hi_j).max(lo_i.max(lo_j));
        alpha[i] = (old_i + yi * t).clamp(0.0, c);
        alpha[j] = (old_j - yj * t).clamp(0.0, c);
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (s, g) in grad.iter_mut().enumerate() {
            *g += q(s, i) * di + q(s, j) * dj;
        }
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let v = -ys[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_n += 1;
        } else if in_up(alpha[t], ys[t]) {
            lb = lb.max(v);
        } else {
            ub = ub.min(v);
        }
    }
    let bias = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => (ub + lb) / 2.0,
            (true, false) => ub,
            (false, true) => lb,
            _ => 0.0,
        }
    };
    let objective = 0.5 * (0..n).map(|t| alpha[t] * (grad[t] - 1.0)).sum::<f64>();

    let (support_vectors, alphas) = (0..n)
        .filter(|&t| alpha[t] > 0.0)
        .map(|t| (xs[t].clone(), ys[t] * alpha[t]))
        .unzip();
    Ok(SvmSolution {
        model: SvmModel {
            format_version: CHECKPOINT_VERSION,
            kind: "svm".into(),
            kernel,
            c,
            support_vectors,
            alphas,
            bias,
            iterations,
            converged,
        },
        alpha,
        objective,
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if !self.support_vectors.is_empty() && x.len() != self.dim() {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }
}

/// Label (+1 / −1) and decision value; a zero decision value maps to +1.
pub fn svm_predict(m: &SvmModel, x: &[f64]) -> Result<(f64, f64)> {
    let d = m.decision_value(x)?;
    Ok((if d >= 0.0 { 1.0 } else { -1.0 }, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn two_points() -> (Vec<Vec<f64>>, Vec<f64>) {
        (vec![vec![-1.0, 0.0], vec![1.0, 0.0]], vec![-1.0, 1.0])
    }

    fn hard_linear() -> SvmParams {
        SvmParams {
            c: 1e6,
            kernel: Some(Kernel::Linear),
            tol: 1e-9,
            ..Default::default()
        }
    }

    #[test]
    fn symmetric_two_points() {
        let (xs, ys) = two_points();
        let m = svm_train(&xs, &ys, &hard_linear()).unwrap();
        assert!(m.bias.abs() < 1e-9);
        for (x, expect) in [([0.0, 5.0], 0.0), ([1.0, 0.0], 1.0), ([-1.0, 3.0], -1.0), ([0.5, -2.0], 0.5)] {
            assert!((m.decision_value(&x).unwrap() - expect).abs() < 1e-9);
        }
        assert_eq!(svm_predict(&m, &[3.0, 0.0]).unwrap().0, 1.0);
    }

    #[test]
    fn zero_decision_maps_to_positive() {
        let (xs, ys) = two_points();
        let mut m = svm_train(&xs, &ys, &hard_linear()).unwrap();
        m.bias = 0.0;
        let (label, d) = svm_predict(&m, &[0.0, 1.0]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(label, 1.0);
    }

    #[test]
    fn errors() {
        let (xs, _) = two_points();
        let p = SvmParams::default();
        assert!(matches!(svm_train(&xs, &[1.0, 1.0], &p), Err(Error::Validation(_))));
        assert!(svm_train(&xs, &[1.0], &p).is_err());
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(svm_train(&ragged, &[1.0, -1.0], &p).is_err());
        let m = svm_train(&xs, &[1.0, -1.0], &p).unwrap();
        assert!(matches!(m.decision_value(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn decision_matches_naive_sum_and_scaling_keeps_labels() {
        let mut rng = RngSeed(2).rng();
        let xs: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] + x[1] > 1.0 { 1.0 } else { -1.0 }).collect();
        let m = svm_train(&xs, &ys, &SvmParams::default()).unwrap();
        let mut scaled = m.clone();
        scaled.alphas.iter_mut().for_each(|a| *a *= 3.7);
        scaled.bias *= 3.7;
        for _ in 0..50 {
            let x: Vec<f64> = vec![rng.random(), rng.random(), rng.random()];
            let mut naive = m.bias;
            for i in 0..m.support_vectors.len() {
                let mut d2 = 0.0f64;
                for k in 0..3 {
                    d2 += (m.support_vectors[i][k] - x[k]).powi(2);
                }
                naive += m.alphas[i] * (-(1.0 / 3.0) * d2).exp();
            }
            assert!((m.decision_value(&x).unwrap() - naive).abs() < 1e-12);
            assert_eq!(svm_predict(&m, &x).unwrap().0, svm_predict(&scaled, &x).unwrap().0);
        }
    }

    #[test]
    fn dual_constraints_hold_on_noisy_blobs() {
        for seed in 0..5 {
            let mut rng = RngSeed(seed).rng();
            let noise = Normal::new(0.0, 1.0).unwrap();
            let xs: Vec<Vec<f64>> = (0..60)
                .map(|i| {
                    let shift = if i % 2 == 0 { 1.0 } else { -1.0 };
                    vec![shift + noise.sample(&mut rng), noise.sample(&mut rng)]
                })
                .collect();
            let ys: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let p = SvmParams {
                c: 0.5,
                ..Default::default()
            };
            let sol = svm_solve(&xs, &ys, &p).unwrap();
            assert!(sol.model.converged);
            assert!(sol.model.alphas.iter().sum::<f64>().abs() < 1e-6);
            assert!(sol.model.alphas.iter().all(|a| a.abs() <= p.c + 1e-12));
        }
    }
}
