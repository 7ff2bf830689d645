//! Class-weighted logistic regression and FTRL-Proximal pairwise logistic
//! regression.
//!
//! Both learners standardize features with train-set mean/std and keep the
//! standardizer inside the fitted [`LinearModel`].

use alloc::vec::Vec;
use core::ops::Range;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::math::{seeded_rng, sigmoid, softplus, sqrt, Standardizer};
use crate::schema::Grade;
use crate::{Error, Result};

/// Weights over standardized features plus a bias; scores are logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn score_row(&self, row: &[f64]) -> f64 {
        let s = &self.standardizer;
        self.bias
            + row
                .iter()
                .zip(&self.weights)
                .zip(s.means.iter().zip(&s.scales))
                .map(|((x, w), (m, sc))| w * (x - m) / sc)
                .sum::<f64>()
    }

    pub fn score_rows(&self, data: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_features();
        if d == 0 {
            return Ok(Vec::new());
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::Dimension { expected: d, found: data.len() % d });
        }
        Ok(data.chunks_exact(d).map(|r| self.score_row(r)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedLrConfig {
    /// Positive-class weight; `None` means #negatives / #positives of the
    /// training data.
    pub alpha: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for WeightedLrConfig {
    fn default() -> Self {
        WeightedLrConfig { alpha: None, learning_rate: 0.5, epochs: 300, l2: 1e-4 }
    }
}

/// Summed class-weighted cross-entropy
/// `-Σ [α·y·log μ + (1 - y)·log(1 - μ)]` with `μ = sigmoid(w·x + b)`.
pub fn weighted_ce_loss(weights: &[f64], bias: f64, x: &[f64], y: &[bool], alpha: f64) -> f64 {
    let d = weights.len();
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let z = bias + dot(weights, &x[i * d..(i + 1) * d]);
            if yi {
                alpha * softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Training objective `loss / n + (l2 / 2)·‖w‖²` and its gradient.
/// `params` holds the weights followed by the bias.
pub fn weighted_lr_objective(params: &[f64], x: &[f64], y: &[bool], alpha: f64, l2: f64) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = params.split_at(d);
    let n = y.len().max(1) as f64;
    let mut grad = alloc::vec![0.0; d + 1];
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = &x[i * d..(i + 1) * d];
        let z = b[0] + dot(w, row);
        let mu = sigmoid(z);
        let dz = if yi {
            loss += alpha * softplus(-z);
            -alpha * (1.0 - mu)
        } else {
            loss += softplus(z);
            mu
        };
        for (g, xv) in grad[..d].iter_mut().zip(row) {
            *g += dz * xv;
        }
        grad[d] += dz;
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5 * l2;
    for (g, wv) in grad[..d].iter_mut().zip(w) {
        *g = *g / n + l2 * wv;
    }
    grad[d] /= n;
    (loss / n + reg, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLrFit {
    pub model: LinearModel,
    pub alpha: f64,
    /// Objective value after each epoch.
    pub losses: Vec<f64>,
}

/// Class weight that balances the two classes.
pub fn balancing_alpha(y: &[bool]) -> f64 {
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        1.0
    } else {
        neg as f64 / pos as f64
    }
}

/// Full-batch gradient descent on the weighted objective.
pub fn fit_weighted_lr(x: &[f64], d: usize, y: &[bool], cfg: &WeightedLrConfig) -> Result<WeightedLrFit> {
    if x.len() != y.len() * d {
        return Err(Error::Dimension { expected: y.len() * d, found: x.len() });
    }
    let alpha = cfg.alpha.unwrap_or_else(|| balancing_alpha(y));
    if !(alpha > 0.0) || !(cfg.learning_rate > 0.0) {
        return Err(Error::Argument("alpha and learning rate must be > 0".into()));
    }
    let standardizer = Standardizer::fit(x, d);
    let xs = standardizer.transform(x);
    let mut params = alloc::vec![0.0; d + 1];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = weighted_lr_objective(&params, &xs, y, alpha, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        losses.push(weighted_lr_objective(&params, &xs, y, alpha, cfg.l2).0);
        if !losses[epoch].is_finite() {
            return Err(Error::Divergence { epoch });
        }
    }
    let bias = params.pop().unwrap_or(0.0);
    Ok(WeightedLrFit { model: LinearModel { standardizer, weights: params, bias }, alpha, losses })
}

/// Difference-vector pairs for pairwise training.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseData {
    pub x: Vec<f64>,
    pub y: Vec<bool>,
    pub d: usize,
}

impl PairwiseData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// For every (higher grade `i`, lower grade `j`) pair inside a query emits
/// `x_i - x_j` labelled 1 and `x_j - x_i` labelled 0. At most `cap`
/// preference pairs are kept per query, drawn without replacement.
pub fn pairwise_expand(
    x: &[f64],
    d: usize,
    grades: &[Grade],
    queries: &[Range<usize>],
    cap: usize,
    seed: u64,
) -> PairwiseData {
    let mut rng = seeded_rng(seed);
    let mut out = PairwiseData { x: Vec::new(), y: Vec::new(), d };
    for q in queries {
        let mut prefs = Vec::new();
        for i in q.clone() {
            for j in q.clone() {
                if grades[i] > grades[j] {
                    prefs.push((i, j));
                }
            }
        }
        if prefs.len() > cap {
            let mut keep = index::sample(&mut rng, prefs.len(), cap).into_vec();
            keep.sort_unstable();
            prefs = keep.into_iter().map(|k| prefs[k]).collect();
        }
        for (i, j) in prefs {
            let (xi, xj) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            out.x.extend(xi.iter().zip(xj).map(|(a, b)| a - b));
            out.y.push(true);
            out.x.extend(xj.iter().zip(xi).map(|(a, b)| a - b));
            out.y.push(false);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtrlConfig {
    pub alpha: f64,
    pub beta: f64,
    pub l1: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Train on pairwise difference vectors instead of single rows.
    pub pairwise: bool,
    pub pair_cap: usize,
}

impl Default for FtrlConfig {
    fn default() -> Self {
        FtrlConfig { alpha: 0.05, beta: 1.0, l1: 0.01, l2: 0.1, epochs: 3, seed: 0, pairwise: true, pair_cap: 100 }
    }
}

impl FtrlConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) || !(self.l1 >= 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Argument("FTRL needs alpha > 0 and beta, l1, l2 >= 0".into()));
        }
        Ok(())
    }
}

/// Per-coordinate FTRL-Proximal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Ftrl {
    alpha: f64,
    beta: f64,
    l1: f64,
    l2: f64,
    z: Vec<f64>,
    n: Vec<f64>,
}

impl Ftrl {
    pub fn new(dim: usize, cfg: &FtrlConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Ftrl {
            alpha: cfg.alpha,
            beta: cfg.beta,
            l1: cfg.l1,
            l2: cfg.l2,
            z: alloc::vec![0.0; dim],
            n: alloc::vec![0.0; dim],
        })
    }

    /// Closed-form weight of coordinate `i`; exactly zero inside the L1 band.
    pub fn weight(&self, i: usize) -> f64 {
        let z = self.z[i];
        if z.abs() <= self.l1 {
            0.0
        } else {
            -(z - z.signum() * self.l1) / ((self.beta + sqrt(self.n[i])) / self.alpha + self.l2)
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.z.len()).map(|i| self.weight(i)).collect()
    }

    /// Applies gradient `g` to coordinate `i`.
    pub fn update_coordinate(&mut self, i: usize, g: f64) {
        let w = self.weight(i);
        let n = self.n[i];
        let sigma = (sqrt(n + g * g) - sqrt(n)) / self.alpha;
        self.z[i] += g - sigma * w;
        self.n[i] = n + g * g;
    }

    /// One logistic-loss step on example `x` (dense) with label `y`.
    pub fn step(&mut self, x: &[f64], y: bool) {
        let logit: f64 = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| self.weight(i) * v).sum();
        let residual = sigmoid(logit) - if y { 1.0 } else { 0.0 };
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                self.update_coordinate(i, residual * v);
            }
        }
    }
}

/// Fits FTRL-Proximal logistic regression, pairwise or pointwise.
pub fn fit_ftrl(
    x: &[f64],
    d: usize,
    grades: &[Grade],
    queries: &[Range<usize>],
    cfg: &FtrlConfig,
) -> Result<LinearModel> {
    cfg.validate()?;
    if x.len() != grades.len() * d {
        return Err(Error::Dimension { expected: grades.len() * d, found: x.len() });
    }
    let standardizer = Standardizer::fit(x, d);
    let xs = standardizer.transform(x);
    let (examples, labels, width) = if cfg.pairwise {
        let p = pairwise_expand(&xs, d, grades, queries, cfg.pair_cap, cfg.seed);
        (p.x, p.y, d)
    } else {
        // append a constant bias coordinate
        let mut ex = Vec::with_capacity(grades.len() * (d + 1));
        for row in xs.chunks_exact(d.max(1)).take(grades.len()) {
            ex.extend_from_slice(&row[..d]);
            ex.push(1.0);
        }
        if d == 0 {
            ex = alloc::vec![1.0; grades.len()];
        }
        (ex, grades.iter().map(|g| g.is_positive()).collect::<Vec<_>>(), d + 1)
    };
    let mut state = Ftrl::new(width, cfg)?;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = seeded_rng(crate::math::child_seed(cfg.seed, 1));
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            state.step(&examples[i * width..(i + 1) * width], labels[i]);
        }
    }
    let mut weights = state.weights();
    let bias = if cfg.pairwise { 0.0 } else { weights.pop().unwrap_or(0.0) };
    Ok(LinearModel { standardizer, weights, bias })
}
