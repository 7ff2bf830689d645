//! Regression trees and the ensembles built from them.
//!
//! Trees grow level by level over presorted feature orders, so one level
//! costs a single pass over every (row, feature) pair. A row goes left when
//! its value is strictly below the split threshold.

mod boost;
mod forest;
mod lambda;

pub use boost::{gbm_fit, lambdamart_fit, BoostLoss, BoostParams, GbmModel, RankData};
pub use forest::{forest_fit, ForestMode, ForestModel, ForestParams};
pub use lambda::{lambda_gradients, LAMBDA_SIGMA};

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SplitMode {
    /// Exhaustive search for the variance-reduction maximiser.
    #[default]
    Best,
    /// One uniform threshold per candidate feature; the best of those wins.
    RandomThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features drawn as split candidates at each node.
    pub feature_subsample: f64,
    pub split_mode: SplitMode,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 4, min_samples_leaf: 10, feature_subsample: 1.0, split_mode: SplitMode::Best }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Argument("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Argument("min_samples_leaf must be at least 1".into()));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::Argument("feature_subsample must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn n_candidates(&self, d: usize) -> usize {
        let k = libm::ceil(self.feature_subsample * d as f64) as usize;
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree { nodes: vec![Node::Leaf(value)] }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let Node::Split { feature, threshold, left, right } = self.nodes[i] {
            i = if row[feature] < threshold { left } else { right };
        }
        i
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf(v) => v,
            Node::Split { .. } => unreachable!("leaf_index stops at a leaf"),
        }
    }

    pub fn predict(&self, x: &[f64], d: usize) -> Vec<f64> {
        x.chunks_exact(d.max(1)).map(|r| self.predict_row(r)).collect()
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .max()
    }
}

/// Per-feature row orders, ascending by value with ties by row index.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    n: usize,
    order: Vec<u32>,
}

impl SortedColumns {
    pub fn new(x: &[f64], d: usize) -> Self {
        let n = x.len().checked_div(d).unwrap_or(0);
        let mut order = Vec::with_capacity(n * d);
        for f in 0..d {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize * d + f].total_cmp(&x[b as usize * d + f]));
            order.extend(idx);
        }
        SortedColumns { n, order }
    }

    fn column(&self, f: usize) -> &[u32] {
        &self.order[f * self.n..(f + 1) * self.n]
    }
}

/// How leaf outputs are computed from the rows that land in them.
#[derive(Debug, Clone, Copy)]
pub enum LeafRule<'a> {
    /// Weighted mean of the fitted targets.
    Mean,
    /// One Newton step: sum of gradients over sum of hessians.
    Newton { grad: &'a [f64], hess: &'a [f64] },
}

const NEWTON_EPS: f64 = 1e-9;

/// Everything a single tree fit needs besides its parameters.
#[derive(Debug, Clone, Copy)]
pub struct TreeInput<'a> {
    pub x: &'a [f64],
    pub d: usize,
    pub sorted: &'a SortedColumns,
    pub targets: &'a [f64],
    pub weights: Option<&'a [f64]>,
    /// Row multiplicities; 0 excludes a row (subsampling, bootstrap).
    pub mult: Option<&'a [u32]>,
    pub leaf: LeafRule<'a>,
}

/// Fits one tree with mean leaves on all rows.
pub fn tree_fit(x: &[f64], d: usize, targets: &[f64], weights: Option<&[f64]>, params: &TreeParams, seed: u64) -> Result<RegressionTree> {
    params.validate()?;
    check_shapes(x, d, targets)?;
    if let Some(w) = weights {
        if w.len() != targets.len() || w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Argument("weights must be finite, non-negative and one per row".into()));
        }
    }
    let sorted = SortedColumns::new(x, d);
    let input = TreeInput { x, d, sorted: &sorted, targets, weights, mult: None, leaf: LeafRule::Mean };
    Ok(grow(&input, params, &mut crate::math::seeded_rng(seed)))
}

pub(crate) fn check_shapes(x: &[f64], d: usize, targets: &[f64]) -> Result<()> {
    if d == 0 || x.len() != targets.len() * d {
        return Err(Error::Dimension { expected: targets.len() * d.max(1), found: x.len() });
    }
    if targets.is_empty() {
        return Err(Error::Argument("cannot fit a tree on zero rows".into()));
    }
    if x.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Argument("tree inputs must be finite (impute missing values first)".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Stats {
    count: u64,
    w: f64,
    s: f64,
    t_min: f64,
    t_max: f64,
}

impl Stats {
    const EMPTY: Stats = Stats { count: 0, w: 0.0, s: 0.0, t_min: f64::INFINITY, t_max: f64::NEG_INFINITY };

    fn add(&mut self, m: u32, w: f64, t: f64) {
        self.count += m as u64;
        self.w += w;
        self.s += w * t;
        self.t_min = self.t_min.min(t);
        self.t_max = self.t_max.max(t);
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

const NONE: u32 = u32::MAX;

fn split_gain(left_w: f64, left_s: f64, total: &Stats) -> f64 {
    let right_w = total.w - left_w;
    let right_s = total.s - left_s;
    left_s * left_s / left_w + right_s * right_s / right_w - total.s * total.s / total.w
}

pub(crate) fn grow(input: &TreeInput<'_>, params: &TreeParams, rng: &mut ChaCha8Rng) -> RegressionTree {
    let TreeInput { x, d, targets, .. } = *input;
    let n = targets.len();
    let mult = |r: usize| input.mult.map_or(1, |m| m[r]);
    let row_w = |r: usize| mult(r) as f64 * input.weights.map_or(1.0, |w| w[r]);
    let msl = params.min_samples_leaf as u64;

    let mut nodes = vec![Node::Leaf(0.0)];
    // Node id of each row, and its slot in the current frontier (NONE once settled).
    let mut node_of = vec![0u32; n];
    let mut slot_of = vec![NONE; n];
    let mut root = Stats::EMPTY;
    for r in 0..n {
        if mult(r) > 0 {
            slot_of[r] = 0;
            root.add(mult(r), row_w(r), targets[r]);
        } else {
            node_of[r] = NONE;
        }
    }
    let mut frontier: Vec<(usize, Stats)> = vec![(0, root)];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let ns = frontier.len();
        let mut cand = vec![false; ns * d];
        let mut any = false;
        for (slot, (_, st)) in frontier.iter().enumerate() {
            let splittable = st.count >= 2 * msl && st.t_min < st.t_max && st.w > 0.0;
            if !splittable {
                continue;
            }
            any = true;
            let k = params.n_candidates(d);
            if k == d {
                cand[slot * d..(slot + 1) * d].fill(true);
            } else {
                for f in index::sample(rng, d, k) {
                    cand[slot * d + f] = true;
                }
            }
        }
        if !any {
            break;
        }
        let best = match params.split_mode {
            SplitMode::Best => best_splits(input, &frontier, &slot_of, &cand, msl, &row_w),
            SplitMode::RandomThreshold => random_splits(input, &frontier, &slot_of, &cand, msl, &row_w, rng),
        };

        // Children of split nodes form the next frontier.
        let mut child_slot = vec![(NONE, NONE); ns];
        let mut next: Vec<(usize, Stats)> = Vec::new();
        for (slot, c) in best.iter().enumerate() {
            if let Some(c) = c {
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[frontier[slot].0] = Node::Split { feature: c.feature, threshold: c.threshold, left, right };
                child_slot[slot] = (next.len() as u32, next.len() as u32 + 1);
                next.push((left, Stats::EMPTY));
                next.push((right, Stats::EMPTY));
            }
        }
        for r in 0..n {
            let s = slot_of[r];
            if s == NONE {
                continue;
            }
            match best[s as usize] {
                Some(c) => {
                    let (l, rt) = child_slot[s as usize];
                    let cs = if x[r * d + c.feature] < c.threshold { l } else { rt };
                    slot_of[r] = cs;
                    node_of[r] = next[cs as usize].0 as u32;
                    next[cs as usize].1.add(mult(r), row_w(r), targets[r]);
                }
                None => slot_of[r] = NONE,
            }
        }
        frontier = next;
    }

    let mut num = vec![0.0; nodes.len()];
    let mut den = vec![0.0; nodes.len()];
    for r in 0..n {
        let node = node_of[r];
        if node == NONE {
            continue;
        }
        let node = node as usize;
        match input.leaf {
            LeafRule::Mean => {
                num[node] += row_w(r) * targets[r];
                den[node] += row_w(r);
            }
            LeafRule::Newton { grad, hess } => {
                num[node] += mult(r) as f64 * grad[r];
                den[node] += mult(r) as f64 * hess[r];
            }
        }
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf(v) = node {
            *v = match input.leaf {
                LeafRule::Mean if den[i] > 0.0 => num[i] / den[i],
                LeafRule::Mean => 0.0,
                LeafRule::Newton { .. } => num[i] / (den[i] + NEWTON_EPS),
            };
        }
    }
    RegressionTree { nodes }
}

#[derive(Clone, Copy)]
struct Scan {
    count: u64,
    w: f64,
    s: f64,
    last: f64,
    seen: bool,
}

const SCAN0: Scan = Scan { count: 0, w: 0.0, s: 0.0, last: 0.0, seen: false };

/// Exhaustive scan: features ascending, thresholds ascending, strict
/// improvement only, so ties keep the lowest feature and threshold.
fn best_splits(
    input: &TreeInput<'_>,
    frontier: &[(usize, Stats)],
    slot_of: &[u32],
    cand: &[bool],
    msl: u64,
    row_w: &dyn Fn(usize) -> f64,
) -> Vec<Option<Candidate>> {
    let TreeInput { x, d, targets, .. } = *input;
    let mult = |r: usize| input.mult.map_or(1, |m| m[r]);
    let ns = frontier.len();
    let mut best: Vec<Option<Candidate>> = vec![None; ns];
    let mut acc = vec![SCAN0; ns];
    for f in 0..d {
        acc.fill(SCAN0);
        for &r in input.sorted.column(f) {
            let r = r as usize;
            let s = slot_of[r];
            if s == NONE || !cand[s as usize * d + f] {
                continue;
            }
            let s = s as usize;
            let v = x[r * d + f];
            let a = &mut acc[s];
            if a.seen && v > a.last {
                let total = &frontier[s].1;
                if a.count >= msl && total.count - a.count >= msl && a.w > 0.0 && total.w - a.w > 0.0 {
                    let gain = split_gain(a.w, a.s, total);
                    if best[s].is_none_or(|b| gain > b.gain) {
                        let mut threshold = a.last + 0.5 * (v - a.last);
                        if !(threshold > a.last) {
                            threshold = v;
                        }
                        best[s] = Some(Candidate { gain, feature: f, threshold });
                    }
                }
            }
            let w = row_w(r);
            a.count += mult(r) as u64;
            a.w += w;
            a.s += w * targets[r];
            a.last = v;
            a.seen = true;
        }
    }
    best
}

fn random_splits(
    input: &TreeInput<'_>,
    frontier: &[(usize, Stats)],
    slot_of: &[u32],
    cand: &[bool],
    msl: u64,
    row_w: &dyn Fn(usize) -> f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<Candidate>> {
    let TreeInput { x, d, targets, .. } = *input;
    let mult = |r: usize| input.mult.map_or(1, |m| m[r]);
    let ns = frontier.len();
    let mut lo = vec![f64::INFINITY; ns * d];
    let mut hi = vec![f64::NEG_INFINITY; ns * d];
    for (r, &s) in slot_of.iter().enumerate() {
        if s == NONE {
            continue;
        }
        let base = s as usize * d;
        for f in 0..d {
            if cand[base + f] {
                let v = x[r * d + f];
                lo[base + f] = lo[base + f].min(v);
                hi[base + f] = hi[base + f].max(v);
            }
        }
    }
    // Thresholds lie in (min, max], so both sides are non-empty.
    let mut thr = vec![f64::NAN; ns * d];
    for i in 0..ns * d {
        if cand[i] && lo[i] < hi[i] {
            let u: f64 = rng.random();
            let t = hi[i] - u * (hi[i] - lo[i]);
            thr[i] = if t > lo[i] { t } else { hi[i] };
        }
    }
    let mut acc = vec![(0u64, 0.0f64, 0.0f64); ns * d];
    for (r, &s) in slot_of.iter().enumerate() {
        if s == NONE {
            continue;
        }
        let base = s as usize * d;
        let w = row_w(r);
        for f in 0..d {
            if x[r * d + f] < thr[base + f] {
                let a = &mut acc[base + f];
                a.0 += mult(r) as u64;
                a.1 += w;
                a.2 += w * targets[r];
            }
        }
    }
    (0..ns)
        .map(|s| {
            let total = &frontier[s].1;
            let mut best: Option<Candidate> = None;
            for f in 0..d {
                let i = s * d + f;
                let (count, w, sum) = acc[i];
                if thr[i].is_nan() || count < msl || total.count - count < msl || w <= 0.0 || total.w - w <= 0.0 {
                    continue;
                }
                let gain = split_gain(w, sum, total);
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate { gain, feature: f, threshold: thr[i] });
                }
            }
            best
        })
        .collect()
}

/// Runs `f` for every index, in parallel when the `parallel` feature is on.
/// Results keep index order either way.
pub(crate) fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
