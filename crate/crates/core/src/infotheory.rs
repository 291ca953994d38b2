//! Entropies, KL divergence, plug-in mutual information and the
//! minimum-mutual-information layer selector. All logarithms are base 2.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::validation("empty distribution"));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::validation(format!("probability {v} is negative or not finite")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::validation(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(p))
    }

    /// Normalizes nonnegative counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::validation("no counts"));
        }
        Ok(Self(counts.iter().map(|&c| c as f64 / n as f64).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("empty distribution"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `−Σ p log2 p`, with `0·log 0 = 0`.
pub fn shannon_entropy(p: &ProbVector) -> f64 {
    let h: f64 = p.0.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
    h.max(0.0)
}

/// `log2(Σ p^α) / (1 − α)`; the α = 1 limit is the Shannon entropy.
pub fn renyi_entropy(p: &ProbVector, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("Rényi order must be positive, got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(shannon_entropy(p));
    }
    let s: f64 = p.0.iter().filter(|&&v| v > 0.0).map(|&v| v.powf(alpha)).sum();
    Ok(s.log2() / (1.0 - alpha))
}

/// `Σ p log2(p/q)`; `+∞` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "distributions have {} and {} outcomes",
            p.len(),
            q.len()
        )));
    }
    let mut d = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            d += pi * (pi / qi).log2();
        }
    }
    Ok(d.max(0.0))
}

/// Equal-width joint histogram over `[0,1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    bins: usize,
    /// row-major: `counts[i * bins + j]` counts samples with x in bin i, y in bin j
    counts: Vec<u64>,
    n: u64,
}

impl JointHistogram {
    pub fn new(x: &[f64], y: &[f64], bins: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::shape(format!(
                "paired samples have lengths {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::validation("need at least two paired samples"));
        }
        if bins < 2 {
            return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
        }
        let mut counts = vec![0u64; bins * bins];
        for (&a, &b) in x.iter().zip(y) {
            counts[bin_of(a, bins) * bins + bin_of(b, bins)] += 1;
        }
        Ok(Self {
            bins,
            counts,
            n: x.len() as u64,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.bins + j]
    }

    /// Bin boundaries shared by both axes.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|k| k as f64 / self.bins as f64).collect()
    }

    pub fn x_marginal(&self) -> Vec<u64> {
        self.counts.chunks(self.bins).map(|row| row.iter().sum()).collect()
    }

    pub fn y_marginal(&self) -> Vec<u64> {
        (0..self.bins)
            .map(|j| (0..self.bins).map(|i| self.count(i, j)).sum())
            .collect()
    }

    fn entropy_of(counts: &[u64], n: u64) -> f64 {
        let n = n as f64;
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum();
        h.max(0.0)
    }

    pub fn joint_entropy(&self) -> f64 {
        Self::entropy_of(&self.counts, self.n)
    }

    pub fn x_entropy(&self) -> f64 {
        Self::entropy_of(&self.x_marginal(), self.n)
    }

    pub fn y_entropy(&self) -> f64 {
        Self::entropy_of(&self.y_marginal(), self.n)
    }

    /// `H(X) + H(Y) − H(X,Y)`, clamped at zero.
    pub fn mutual_information(&self) -> f64 {
        (self.x_entropy() + self.y_entropy() - self.joint_entropy()).max(0.0)
    }
}

/// Bin index of `v` among `bins` equal-width bins on `[0,1]`; values are
/// clamped first so 1.0 lands in the last bin.
#[inline]
pub fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Plug-in MI estimate (bits) between paired components of `x` and `y`.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    Ok(JointHistogram::new(x, y, bins)?.mutual_information())
}

/// Which cross-class feature pairs enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every `(a, b)` with `a` from class 1 and `b` from class 2.
    #[default]
    Cross,
    /// `(a_k, b_k)` for `k < min(|A|, |B|)`.
    Matched,
}

/// Mean MI over cross-class pairs. When the pair population exceeds
/// `max_pairs`, a seeded uniform sample without replacement is used; the
/// sample is drawn before any parallel evaluation.
pub fn mean_cross_class_mi(
    feats_a: &[Vec<f64>],
    feats_b: &[Vec<f64>],
    bins: usize,
    max_pairs: usize,
    seed: RngSeed,
    pairing: Pairing,
) -> Result<f64> {
    if feats_a.is_empty() || feats_b.is_empty() {
        return Err(Error::validation("both classes need at least one feature vector"));
    }
    if max_pairs == 0 {
        return Err(Error::validation("max_pairs must be positive"));
    }
    let dim = feats_a[0].len();
    if feats_a.iter().chain(feats_b).any(|v| v.len() != dim) {
        return Err(Error::shape("feature vectors differ in length"));
    }
    let pairs: Vec<(usize, usize)> = match pairing {
        Pairing::Matched => (0..feats_a.len().min(feats_b.len()))
            .map(|k| (k, k))
            .take(max_pairs)
            .collect(),
        Pairing::Cross => {
            let nb = feats_b.len();
            let total = feats_a.len() * nb;
            if total <= max_pairs {
                (0..total).map(|k| (k / nb, k % nb)).collect()
            } else {
                let mut rng = seed.rng();
                let mut picked = sample_indices(&mut rng, total, max_pairs).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|k| (k / nb, k % nb)).collect()
            }
        }
    };
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| mutual_information(&feats_a[i], &feats_b[j], bins))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFeatures {
    pub layer_id: String,
    pub class1: Vec<Vec<f64>>,
    pub class2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer_id: String,
    pub mean_mi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiParams {
    pub bins: usize,
    pub max_pairs: usize,
    pub seed: RngSeed,
    #[serde(default)]
    pub pairing: Pairing,
}

impl Default for MiParams {
    fn default() -> Self {
        Self {
            bins: 8,
            max_pairs: 2000,
            seed: RngSeed::default(),
            pairing: Pairing::Cross,
        }
    }
}

/// Mean cross-class MI for every layer, in input order.
pub fn score_layers(per_layer: &[LayerFeatures], params: &MiParams) -> Result<Vec<LayerScore>> {
    if per_layer.is_empty() {
        return Err(Error::validation("no layers to select from"));
    }
    per_layer
        .iter()
        .map(|l| {
            let mean_mi = mean_cross_class_mi(
                &l.class1,
                &l.class2,
                params.bins,
                params.max_pairs,
                params.seed,
                params.pairing,
            )
            .map_err(|e| Error::validation(format!("layer `{}`: {e}", l.layer_id)))?;
            Ok(LayerScore {
                layer_id: l.layer_id.clone(),
                mean_mi,
            })
        })
        .collect()
}

/// The layer with the least mean cross-class MI; the earliest wins ties.
pub fn select_layer(per_layer: &[LayerFeatures], params: &MiParams) -> Result<String> {
    let scores = score_layers(per_layer, params)?;
    Ok(argmin_layer(&scores).layer_id.clone())
}

pub fn argmin_layer(scores: &[LayerScore]) -> &LayerScore {
    scores
        .iter()
        .reduce(|best, s| if s.mean_mi < best.mean_mi { s } else { best })
        .expect("non-empty scores")
}
