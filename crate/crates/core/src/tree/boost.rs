//! Stage-wise boosting: squared, logistic and lambdarank losses.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{check_shapes, grow, lambda_gradients, LeafRule, RegressionTree, SortedColumns, TreeInput, TreeParams};
use crate::math::{child_seed, ln, seeded_rng, sigmoid, softplus};
use crate::metrics::{query_ndcg, GainMode};
use crate::schema::Grade;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoostLoss {
    #[default]
    Squared,
    /// Binary targets; trees hold Newton steps on the log-odds.
    Logistic,
    /// Query-grouped lambda gradients with Newton leaves.
    LambdaRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_trees: usize,
    pub shrinkage: f64,
    pub loss: BoostLoss,
    /// Fraction of rows (queries, for lambdarank) drawn for each stage.
    pub subsample: f64,
    pub seed: u64,
    /// NDCG truncation for lambdarank.
    pub k: usize,
    pub sigma: f64,
    pub tree: TreeParams,
    /// Stop after this many stages without validation improvement.
    pub early_stopping: Option<usize>,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_trees: 100,
            shrinkage: 0.1,
            loss: BoostLoss::Squared,
            subsample: 1.0,
            seed: 0,
            k: crate::metrics::DEFAULT_K,
            sigma: super::LAMBDA_SIGMA,
            tree: TreeParams::default(),
            early_stopping: None,
        }
    }
}

impl BoostParams {
    pub fn lambdarank() -> Self {
        BoostParams { loss: BoostLoss::LambdaRank, ..BoostParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Argument("shrinkage must lie in (0, 1]".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Argument("subsample must lie in (0, 1]".into()));
        }
        if self.k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Argument("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// An additive tree model: `base + shrinkage * sum(trees)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub base_score: f64,
    pub shrinkage: f64,
    pub loss: BoostLoss,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    /// Training loss after each stage (index 0 is the base score alone).
    pub train_loss: Vec<f64>,
    /// Validation NDCG@k after each stage, when a validation set was given.
    pub valid_ndcg: Vec<f64>,
}

impl GbmModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_row_staged(row, self.trees.len())
    }

    pub fn predict_row_staged(&self, row: &[f64], stages: usize) -> f64 {
        self.base_score + self.shrinkage * self.trees[..stages].iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_staged(x, self.trees.len())
    }

    pub fn predict_staged(&self, x: &[f64], stages: usize) -> Result<Vec<f64>> {
        if self.n_features == 0 || !x.len().is_multiple_of(self.n_features) {
            return Err(Error::Dimension { expected: self.n_features, found: x.len() });
        }
        let stages = stages.min(self.trees.len());
        Ok(x.chunks_exact(self.n_features).map(|r| self.predict_row_staged(r, stages)).collect())
    }
}

fn squared_loss(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

fn log_loss(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(&t, &z)| softplus(z) - t * z).sum::<f64>() / y.len() as f64
}

fn row_mask(n: usize, frac: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Option<Vec<u32>> {
    if frac >= 1.0 {
        return None;
    }
    let take = (libm::round(frac * n as f64) as usize).clamp(1, n);
    let mut mask = vec![0u32; n];
    for i in index::sample(rng, n, take) {
        mask[i] = 1;
    }
    Some(mask)
}

/// Gradient boosting on squared or logistic loss. Logistic targets must be 0 or 1.
pub fn gbm_fit(x: &[f64], d: usize, targets: &[f64], params: &BoostParams) -> Result<GbmModel> {
    params.validate()?;
    check_shapes(x, d, targets)?;
    let n = targets.len();
    let base_score = match params.loss {
        BoostLoss::Squared => targets.iter().sum::<f64>() / n as f64,
        BoostLoss::Logistic => {
            if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(Error::Argument("logistic loss needs 0/1 targets".into()));
            }
            let p = (targets.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
            ln(p / (1.0 - p))
        }
        BoostLoss::LambdaRank => {
            return Err(Error::Argument("lambdarank needs query groups; use lambdamart_fit".into()))
        }
    };
    let loss = |f: &[f64]| match params.loss {
        BoostLoss::Logistic => log_loss(targets, f),
        _ => squared_loss(targets, f),
    };
    let sorted = SortedColumns::new(x, d);
    let mut f = vec![base_score; n];
    let mut model = GbmModel {
        base_score,
        shrinkage: params.shrinkage,
        loss: params.loss,
        n_features: d,
        trees: Vec::with_capacity(params.n_trees),
        train_loss: vec![loss(&f)],
        valid_ndcg: Vec::new(),
    };
    let mut resid = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for stage in 0..params.n_trees {
        let mut rng = seeded_rng(child_seed(params.seed, stage as u64));
        let mask = row_mask(n, params.subsample, &mut rng);
        for i in 0..n {
            match params.loss {
                BoostLoss::Logistic => {
                    let p = sigmoid(f[i]);
                    resid[i] = targets[i] - p;
                    hess[i] = p * (1.0 - p);
                }
                _ => resid[i] = targets[i] - f[i],
            }
        }
        let leaf = match params.loss {
            BoostLoss::Logistic => LeafRule::Newton { grad: &resid, hess: &hess },
            _ => LeafRule::Mean,
        };
        let input = TreeInput { x, d, sorted: &sorted, targets: &resid, weights: None, mult: mask.as_deref(), leaf };
        let tree = grow(&input, &params.tree, &mut rng);
        for (fi, row) in f.iter_mut().zip(x.chunks_exact(d)) {
            *fi += params.shrinkage * tree.predict_row(row);
        }
        model.trees.push(tree);
        let l = loss(&f);
        if !l.is_finite() {
            return Err(Error::Divergence { epoch: stage });
        }
        model.train_loss.push(l);
    }
    Ok(model)
}

/// Query-grouped rows: `ranges` index contiguous blocks of one query.
#[derive(Debug, Clone, Copy)]
pub struct RankData<'a> {
    pub x: &'a [f64],
    pub d: usize,
    pub grades: &'a [Grade],
    pub ranges: &'a [Range<usize>],
    pub prop_ids: &'a [u64],
    /// Per-row starting scores added to the base score of 0.
    pub init: Option<&'a [f64]>,
}

impl RankData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.grades.len();
        if self.prop_ids.len() != n {
            return Err(Error::Dimension { expected: n, found: self.prop_ids.len() });
        }
        if let Some(init) = self.init {
            if init.len() != n || init.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("initial scores must be finite, one per row".into()));
            }
        }
        let mut next = 0;
        for r in self.ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::Argument("query ranges must tile the rows in order".into()));
            }
            next = r.end;
        }
        if next != n {
            return Err(Error::Argument("query ranges must cover every row".into()));
        }
        let dummy = vec![0.0; n];
        check_shapes(self.x, self.d, &dummy)
    }

    fn mean_ndcg(&self, scores: &[f64], k: usize) -> f64 {
        let mut total = 0.0;
        let mut used = 0usize;
        for r in self.ranges {
            let v = query_ndcg(&scores[r.clone()], &self.prop_ids[r.clone()], &self.grades[r.clone()], k, GainMode::Exponential);
            if !v.degenerate {
                total += v.value;
                used += 1;
            }
        }
        if used == 0 { 0.0 } else { total / used as f64 }
    }
}

/// LambdaMART: each stage fits a tree to the lambdas and sets leaves to a
/// Newton step. Rows start from `init` when given; the returned model holds
/// only the trees, so callers add the same initial scores at prediction.
/// With a validation set, NDCG@k is recorded per stage and early stopping
/// (if configured) truncates to the best stage.
pub fn lambdamart_fit(train: &RankData<'_>, valid: Option<&RankData<'_>>, params: &BoostParams) -> Result<GbmModel> {
    params.validate()?;
    train.check()?;
    if let Some(v) = valid {
        v.check()?;
        if v.d != train.d {
            return Err(Error::Dimension { expected: train.d, found: v.d });
        }
    }
    let (x, d, n) = (train.x, train.d, train.grades.len());
    let sorted = SortedColumns::new(x, d);
    let start = |r: &RankData<'_>| r.init.map_or_else(|| vec![0.0; r.grades.len()], <[f64]>::to_vec);
    let mut f = start(train);
    let mut fv = valid.map(start);
    let mut model = GbmModel {
        base_score: 0.0,
        shrinkage: params.shrinkage,
        loss: BoostLoss::LambdaRank,
        n_features: d,
        trees: Vec::with_capacity(params.n_trees),
        train_loss: vec![1.0 - train.mean_ndcg(&f, params.k)],
        valid_ndcg: Vec::new(),
    };
    if let (Some(v), Some(fv)) = (valid, &fv) {
        model.valid_ndcg.push(v.mean_ndcg(fv, params.k));
    }
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let (mut best_stage, mut best_ndcg, mut since_best) = (0usize, f64::NEG_INFINITY, 0usize);
    if let Some(&v0) = model.valid_ndcg.first() {
        best_ndcg = v0;
    }
    for stage in 0..params.n_trees {
        let mut rng = seeded_rng(child_seed(params.seed, stage as u64));
        let mask = row_mask(train.ranges.len(), params.subsample, &mut rng).map(|qmask| {
            let mut m = vec![0u32; n];
            for (q, r) in train.ranges.iter().enumerate() {
                m[r.clone()].fill(qmask[q]);
            }
            m
        });
        for r in train.ranges {
            let (l, h) = lambda_gradients(&f[r.clone()], &train.grades[r.clone()], params.k, params.sigma);
            grad[r.clone()].copy_from_slice(&l);
            hess[r.clone()].copy_from_slice(&h);
        }
        let input = TreeInput {
            x,
            d,
            sorted: &sorted,
            targets: &grad,
            weights: None,
            mult: mask.as_deref(),
            leaf: LeafRule::Newton { grad: &grad, hess: &hess },
        };
        let tree = grow(&input, &params.tree, &mut rng);
        for (fi, row) in f.iter_mut().zip(x.chunks_exact(d)) {
            *fi += params.shrinkage * tree.predict_row(row);
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: stage });
        }
        let train_ndcg = train.mean_ndcg(&f, params.k);
        model.train_loss.push(1.0 - train_ndcg);
        if let (Some(v), Some(fv)) = (valid, fv.as_mut()) {
            for (fi, row) in fv.iter_mut().zip(v.x.chunks_exact(d)) {
                *fi += params.shrinkage * tree.predict_row(row);
            }
            let vn = v.mean_ndcg(fv, params.k);
            log::debug!("stage {}: train ndcg@{} {:.6}, valid {:.6}", stage + 1, params.k, train_ndcg, vn);
            model.valid_ndcg.push(vn);
            if vn > best_ndcg {
                (best_stage, best_ndcg, since_best) = (stage + 1, vn, 0);
            } else {
                since_best += 1;
            }
        } else {
            log::debug!("stage {}: train ndcg@{} {:.6}", stage + 1, params.k, train_ndcg);
        }
        model.trees.push(tree);
        if params.early_stopping.is_some_and(|p| valid.is_some() && since_best >= p) {
            model.trees.truncate(best_stage);
            model.train_loss.truncate(best_stage + 1);
            model.valid_ndcg.truncate(best_stage + 1);
            log::info!("early stop at stage {} (best valid ndcg {:.6})", best_stage, best_ndcg);
            break;
        }
    }
    Ok(model)
}
