//! Second-order factorization machine trained with plain SGD.
//!
//! `ŷ(x) = w0 + Σ w_i x_i + ½ Σ_f [(Σ_i V_if x_i)² - Σ_i V_if² x_i²]`,
//! which equals the pairwise form `Σ_{i<j} <v_i, v_j> x_i x_j` in
//! `O(d·k)` time.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::{child_seed, seeded_rng, sigmoid, softplus, Standardizer};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FmLoss {
    /// `½ (ŷ - y)²`
    Squared,
    /// `log(1 + e^ŷ) - y·ŷ` with `y ∈ {0, 1}`
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmParams {
    pub k: usize,
    pub init_std: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_w: f64,
    pub l2_v: f64,
    pub seed: u64,
    pub loss: FmLoss,
}

impl Default for FmParams {
    fn default() -> Self {
        FmParams {
            k: 8,
            init_std: 0.01,
            learning_rate: 0.01,
            epochs: 10,
            l2_w: 1e-4,
            l2_v: 1e-4,
            seed: 0,
            loss: FmLoss::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmModel {
    pub w0: f64,
    pub w: Vec<f64>,
    /// `d × k`, row-major: row `i` is the latent vector of feature `i`.
    pub v: Vec<f64>,
    pub k: usize,
}

impl FmModel {
    pub fn zeros(d: usize, k: usize) -> Self {
        FmModel { w0: 0.0, w: alloc::vec![0.0; d], v: alloc::vec![0.0; d * k], k }
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn latent(&self, i: usize) -> &[f64] {
        &self.v[i * self.k..(i + 1) * self.k]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::Dimension { expected: self.w.len(), found: x.len() });
        }
        Ok(self.predict_with_sums(x, &mut alloc::vec![0.0; self.k]))
    }

    /// Prediction that leaves `Σ_i V_if x_i` in `sums` for reuse by the
    /// gradient.
    fn predict_with_sums(&self, x: &[f64], sums: &mut [f64]) -> f64 {
        let mut y = self.w0 + x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>();
        let mut pair = 0.0;
        for f in 0..self.k {
            let mut s = 0.0;
            let mut sq = 0.0;
            for (i, &xi) in x.iter().enumerate() {
                let t = self.v[i * self.k + f] * xi;
                s += t;
                sq += t * t;
            }
            sums[f] = s;
            pair += s * s - sq;
        }
        y += 0.5 * pair;
        y
    }

    fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.w.iter().chain(&self.v).all(|v| v.is_finite())
    }
}

fn point_loss(loss: FmLoss, pred: f64, y: f64) -> f64 {
    match loss {
        FmLoss::Squared => 0.5 * (pred - y) * (pred - y),
        FmLoss::Logistic => softplus(pred) - y * pred,
    }
}

fn point_dloss(loss: FmLoss, pred: f64, y: f64) -> f64 {
    match loss {
        FmLoss::Squared => pred - y,
        FmLoss::Logistic => sigmoid(pred) - y,
    }
}

/// Per-example SGD objective: point loss plus `½ l2_w ‖w‖² + ½ l2_v ‖V‖²`.
pub fn sample_objective(m: &FmModel, x: &[f64], y: f64, p: &FmParams) -> Result<f64> {
    let pred = m.predict(x)?;
    let reg = 0.5 * p.l2_w * m.w.iter().map(|v| v * v).sum::<f64>()
        + 0.5 * p.l2_v * m.v.iter().map(|v| v * v).sum::<f64>();
    Ok(point_loss(p.loss, pred, y) + reg)
}

/// Gradient of [`sample_objective`], laid out like the model.
pub fn sample_gradient(m: &FmModel, x: &[f64], y: f64, p: &FmParams) -> Result<FmModel> {
    if x.len() != m.w.len() {
        return Err(Error::Dimension { expected: m.w.len(), found: x.len() });
    }
    let mut sums = alloc::vec![0.0; m.k];
    let pred = m.predict_with_sums(x, &mut sums);
    let g = point_dloss(p.loss, pred, y);
    let mut grad = FmModel::zeros(m.w.len(), m.k);
    grad.w0 = g;
    for (i, &xi) in x.iter().enumerate() {
        grad.w[i] = g * xi + p.l2_w * m.w[i];
        for f in 0..m.k {
            let vif = m.v[i * m.k + f];
            grad.v[i * m.k + f] = g * (xi * sums[f] - vif * xi * xi) + p.l2_v * vif;
        }
    }
    Ok(grad)
}

/// A fitted FM with the feature standardizer it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFm {
    pub standardizer: Standardizer,
    pub model: FmModel,
}

impl FittedFm {
    pub fn score_row(&self, row: &[f64], buf: &mut Vec<f64>) -> Result<f64> {
        self.standardizer.transform_row(row, buf);
        self.model.predict(buf)
    }

    pub fn score_rows(&self, data: &[f64]) -> Result<Vec<f64>> {
        let d = self.model.n_features();
        if d == 0 {
            return Ok(Vec::new());
        }
        let mut buf = Vec::with_capacity(d);
        data.chunks_exact(d).map(|r| self.score_row(r, &mut buf)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmFit {
    pub fitted: FittedFm,
    /// Mean point loss over the training rows after each epoch.
    pub losses: Vec<f64>,
}

/// Seeded SGD over shuffled rows.
pub fn fit_fm(x: &[f64], d: usize, targets: &[f64], params: &FmParams) -> Result<FmFit> {
    if x.len() != targets.len() * d {
        return Err(Error::Dimension { expected: targets.len() * d, found: x.len() });
    }
    if !(params.init_std > 0.0) || !(params.learning_rate > 0.0) {
        return Err(Error::Argument("FM needs init_std > 0 and learning_rate > 0".into()));
    }
    if params.loss == FmLoss::Logistic && targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Argument("logistic FM needs 0/1 targets".into()));
    }
    let standardizer = Standardizer::fit(x, d);
    let xs = standardizer.transform(x);
    let mut rng = seeded_rng(params.seed);
    let init = Normal::new(0.0, params.init_std).map_err(|_| Error::Argument("bad init_std".into()))?;
    let mut m = FmModel::zeros(d, params.k);
    for v in &mut m.v {
        *v = init.sample(&mut rng);
    }
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut shuffle_rng = seeded_rng(child_seed(params.seed, 7));
    let mut sums = alloc::vec![0.0; params.k];
    let lr = params.learning_rate;
    let k = params.k;
    let mut losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut shuffle_rng);
        for &r in &order {
            let row = &xs[r * d..(r + 1) * d];
            let pred = m.predict_with_sums(row, &mut sums);
            let g = point_dloss(params.loss, pred, targets[r]);
            m.w0 -= lr * g;
            for (i, &xi) in row.iter().enumerate() {
                m.w[i] -= lr * (g * xi + params.l2_w * m.w[i]);
                for f in 0..k {
                    let vif = m.v[i * k + f];
                    m.v[i * k + f] -= lr * (g * (xi * sums[f] - vif * xi * xi) + params.l2_v * vif);
                }
            }
        }
        if !m.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let loss = (0..targets.len())
            .map(|r| point_loss(params.loss, m.predict_with_sums(&xs[r * d..(r + 1) * d], &mut sums), targets[r]))
            .sum::<f64>()
            / targets.len().max(1) as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        losses.push(loss);
    }
    Ok(FmFit { fitted: FittedFm { standardizer, model: m }, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{fit_weighted_lr, WeightedLrConfig};
    use alloc::vec;
    use rand::Rng;

    /// Direct double sum over feature pairs.
    fn brute_force(m: &FmModel, x: &[f64]) -> f64 {
        let d = x.len();
        let mut y = m.w0;
        for i in 0..d {
            y += m.w[i] * x[i];
        }
        for i in 0..d {
            for j in i + 1..d {
                let dotp: f64 = (0..m.k).map(|f| m.v[i * m.k + f] * m.v[j * m.k + f]).sum();
                y += dotp * x[i] * x[j];
            }
        }
        y
    }

    fn random_model(rng: &mut impl Rng, d: usize, k: usize) -> FmModel {
        FmModel {
            w0: rng.random_range(-1.0..1.0),
            w: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            v: (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            k,
        }
    }

    #[test]
    fn linear_when_latent_is_zero() {
        let m = FmModel { w0: 0.5, w: vec![1.0, -2.0], v: vec![0.0; 6], k: 3 };
        assert_eq!(m.predict(&[3.0, 1.0]).unwrap(), 0.5 + 3.0 - 2.0);
    }

    #[test]
    fn pair_example_and_dimension_check() {
        let m = FmModel { w0: 0.0, w: vec![0.0, 0.0], v: vec![1.0, 0.0, 1.0, 0.0], k: 2 };
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(m.predict(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_time_form_matches_double_sum() {
        let mut rng = seeded_rng(1);
        for _ in 0..300 {
            let d = rng.random_range(1..=10);
            let k = rng.random_range(0..=4);
            let m = random_model(&mut rng, d, k);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!((m.predict(&x).unwrap() - brute_force(&m, &x)).abs() < 1e-10);
        }
    }

    #[test]
    fn latent_sign_flip_invariance() {
        let mut rng = seeded_rng(2);
        let mut m = random_model(&mut rng, 5, 3);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let before = m.predict(&x).unwrap();
        for i in 0..5 {
            m.v[i * 3 + 1] = -m.v[i * 3 + 1];
        }
        assert!((m.predict(&x).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn quadratic_in_a_single_feature() {
        // a quadratic through three points reproduces a fourth
        let mut rng = seeded_rng(3);
        let m = random_model(&mut rng, 4, 2);
        let mut x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut at = |t: f64| {
            x[2] = t;
            m.predict(&x).unwrap()
        };
        let (y0, y1, y2) = (at(0.0), at(1.0), at(2.0));
        let a = (y2 - 2.0 * y1 + y0) / 2.0;
        let b = y1 - y0 - a;
        let t = 3.7;
        assert!((at(t) - (y0 + b * t + a * t * t)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seeded_rng(4);
        for trial in 0..100 {
            let d = rng.random_range(1..=6);
            let k = rng.random_range(1..=3);
            let m = random_model(&mut rng, d, k);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let loss = if trial % 2 == 0 { FmLoss::Logistic } else { FmLoss::Squared };
            let y = if loss == FmLoss::Logistic { (trial % 4 == 0) as u8 as f64 } else { rng.random_range(-2.0..2.0) };
            let p = FmParams { loss, l2_w: 0.05, l2_v: 0.02, ..Default::default() };
            let g = sample_gradient(&m, &x, y, &p).unwrap();
            let analytic: Vec<f64> = [g.w0].into_iter().chain(g.w.iter().copied()).chain(g.v.iter().copied()).collect();
            let n_params = 1 + d + d * k;
            for j in 0..n_params {
                let h = 1e-5;
                let bump = |delta: f64| {
                    let mut mm = m.clone();
                    match j {
                        0 => mm.w0 += delta,
                        j if j <= d => mm.w[j - 1] += delta,
                        j => mm.v[j - 1 - d] += delta,
                    }
                    sample_objective(&mm, &x, y, &p).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let rel = (fd - analytic[j]).abs() / fd.abs().max(analytic[j].abs()).max(1e-6);
                assert!(rel < 1e-4, "param {j}: fd {fd} vs {}", analytic[j]);
            }
        }
    }

    #[test]
    fn multiplicative_target_is_learned() {
        let mut rng = seeded_rng(5);
        let n = 400;
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let b = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x.extend([a, b]);
            y.push(a * b);
        }
        let p = FmParams {
            k: 2,
            init_std: 0.1,
            learning_rate: 0.01,
            epochs: 60,
            loss: FmLoss::Squared,
            l2_w: 0.0,
            l2_v: 0.0,
            seed: 1,
        };
        let fit = fit_fm(&x, 2, &y, &p).unwrap();
        let preds = fit.fitted.score_rows(&x).unwrap();
        let mse = preds.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        assert!(mse < 0.05, "mse {mse}");
    }

    #[test]
    fn zero_rank_matches_logistic_regression() {
        let mut rng = seeded_rng(6);
        let n = 60;
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<bool> = (0..n).map(|i| x[i * 3] + 0.5 * x[i * 3 + 1] + rng.random_range(-0.8..0.8) > 0.0).collect();
        let targets: Vec<f64> = labels.iter().map(|&b| b as u8 as f64).collect();
        let l2 = 0.1;
        let lr = fit_weighted_lr(&x, 3, &labels, &WeightedLrConfig { alpha: Some(1.0), learning_rate: 0.5, epochs: 3000, l2 }).unwrap();
        let p = FmParams { k: 0, learning_rate: 0.001, epochs: 4000, l2_w: l2, l2_v: 0.0, seed: 2, ..Default::default() };
        let fm = fit_fm(&x, 3, &targets, &p).unwrap();
        let a = lr.model.score_rows(&x).unwrap();
        let b = fm.fitted.score_rows(&x).unwrap();
        let worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "max prediction gap {worst}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_fm(&[1.0, 2.0], 1, &[0.5, 1.0], &FmParams::default()).is_err());
        assert!(fit_fm(&[1.0, 2.0], 1, &[0.0], &FmParams::default()).is_err());
        let p = FmParams { init_std: 0.0, ..Default::default() };
        assert!(fit_fm(&[1.0], 1, &[1.0], &p).is_err());
        let p = FmParams { learning_rate: 1e200, loss: FmLoss::Squared, ..Default::default() };
        assert!(matches!(fit_fm(&[1.0, -3.0], 1, &[1e200, -1e200], &p), Err(Error::Divergence { .. })));
    }
}
