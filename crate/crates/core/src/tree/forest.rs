//! Random forests (bootstrap rows, best splits on feature subsets) and
//! extremely randomized trees (full sample, random thresholds).

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_shapes, grow, map_indices, LeafRule, RegressionTree, SortedColumns, SplitMode, TreeInput, TreeParams};
use crate::math::{child_seed, seeded_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ForestMode {
    #[default]
    BootstrapRf,
    Ert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub mode: ForestMode,
    /// Resample rows with replacement per tree (random-forest mode only).
    pub bootstrap: bool,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            mode: ForestMode::BootstrapRf,
            bootstrap: true,
            tree: TreeParams { max_depth: 10, min_samples_leaf: 10, feature_subsample: 0.5, split_mode: SplitMode::Best },
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn ert() -> Self {
        ForestParams {
            mode: ForestMode::Ert,
            bootstrap: false,
            tree: TreeParams { split_mode: SplitMode::RandomThreshold, ..ForestParams::default().tree },
            ..ForestParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub mode: ForestMode,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !x.len().is_multiple_of(self.n_features) {
            return Err(Error::Dimension { expected: self.n_features, found: x.len() });
        }
        Ok(x.chunks_exact(self.n_features).map(|r| self.predict_row(r)).collect())
    }
}

/// Trees are independent: tree `t` draws only from `child_seed(seed, t)`, so
/// the result does not depend on how many run concurrently.
pub fn forest_fit(x: &[f64], d: usize, targets: &[f64], params: &ForestParams) -> Result<ForestModel> {
    params.tree.validate()?;
    check_shapes(x, d, targets)?;
    if params.n_trees == 0 {
        return Err(Error::Argument("a forest needs at least one tree".into()));
    }
    let n = targets.len();
    let mut tree_params = params.tree;
    let bootstrap = match params.mode {
        ForestMode::BootstrapRf => {
            tree_params.split_mode = SplitMode::Best;
            params.bootstrap
        }
        ForestMode::Ert => {
            tree_params.split_mode = SplitMode::RandomThreshold;
            false
        }
    };
    let sorted = SortedColumns::new(x, d);
    let trees = map_indices(params.n_trees, |t| {
        let mut rng = seeded_rng(child_seed(params.seed, t as u64));
        let mult = bootstrap.then(|| {
            let mut m = vec![0u32; n];
            for _ in 0..n {
                m[rng.random_range(0..n)] += 1;
            }
            m
        });
        if params.mode == ForestMode::Ert {
            assert!(mult.is_none(), "extremely randomized trees use every row");
        }
        let input = TreeInput { x, d, sorted: &sorted, targets, weights: None, mult: mult.as_deref(), leaf: LeafRule::Mean };
        grow(&input, &tree_params, &mut rng)
    });
    Ok(ForestModel { mode: params.mode, n_features: d, trees })
}
