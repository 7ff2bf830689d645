//! DCG / NDCG@k and dataset-level evaluation of score lists.
//!
//! Gains default to `2^g - 1` with discount `1 / log2(i + 1)` for 1-based
//! rank `i`; a linear-gain mode (`g`) is available for sensitivity checks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::schema::{Dataset, Grade};
use crate::{Error, Result};

/// Truncation used throughout the toolkit.
pub const DEFAULT_K: usize = 38;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GainMode {
    #[default]
    Exponential,
    Linear,
}

impl GainMode {
    #[inline]
    pub fn gain(self, grade: Grade) -> f64 {
        let g = grade.value();
        match self {
            GainMode::Exponential => ((1u64 << g) - 1) as f64,
            GainMode::Linear => g as f64,
        }
    }
}

/// Discount at 1-based rank `rank`.
#[inline]
pub fn discount(rank: usize) -> f64 {
    1.0 / crate::math::log2(rank as f64 + 1.0)
}

pub fn dcg_at_k(grades_in_rank_order: &[Grade], k: usize) -> f64 {
    dcg_at_k_with(grades_in_rank_order, k, GainMode::Exponential)
}

pub fn dcg_at_k_with(grades_in_rank_order: &[Grade], k: usize, mode: GainMode) -> f64 {
    grades_in_rank_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| mode.gain(g) * discount(i + 1))
        .sum()
}

pub fn ideal_dcg_at_k(grades: &[Grade], k: usize, mode: GainMode) -> f64 {
    let mut sorted = grades.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    dcg_at_k_with(&sorted, k, mode)
}

/// NDCG of one ranked list. `degenerate` is set when the ideal DCG is zero,
/// in which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ndcg {
    pub value: f64,
    pub degenerate: bool,
}

pub fn ndcg_at_k(grades_in_rank_order: &[Grade], k: usize) -> f64 {
    ndcg_at_k_with(grades_in_rank_order, k, GainMode::Exponential).value
}

pub fn ndcg_at_k_with(grades_in_rank_order: &[Grade], k: usize, mode: GainMode) -> Ndcg {
    let ideal = ideal_dcg_at_k(grades_in_rank_order, k, mode);
    if ideal <= 0.0 {
        return Ndcg { value: 0.0, degenerate: true };
    }
    Ndcg { value: dcg_at_k_with(grades_in_rank_order, k, mode) / ideal, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub srch_id: u64,
    pub prop_id: u64,
    pub score: f64,
}

/// Scores keyed by (srch_id, prop_id); the unit exchanged between models,
/// ensembles and evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreList {
    entries: Vec<ScoreEntry>,
}

impl ScoreList {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Argument(format!(
                    "non-finite score for ({}, {})",
                    e.srch_id, e.prop_id
                )));
            }
            if !seen.insert((e.srch_id, e.prop_id)) {
                return Err(Error::Argument(format!(
                    "duplicate score for ({}, {})",
                    e.srch_id, e.prop_id
                )));
            }
        }
        Ok(ScoreList { entries })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score)
    }

    pub fn to_map(&self) -> BTreeMap<(u64, u64), f64> {
        self.entries.iter().map(|e| ((e.srch_id, e.prop_id), e.score)).collect()
    }

    pub fn keys(&self) -> BTreeSet<(u64, u64)> {
        self.entries.iter().map(|e| (e.srch_id, e.prop_id)).collect()
    }

    /// Export order: srch_id ascending, then score descending, then prop_id.
    pub fn sorted(&self) -> Vec<ScoreEntry> {
        let mut out = self.entries.clone();
        out.sort_by(|a, b| {
            a.srch_id
                .cmp(&b.srch_id)
                .then_with(|| b.score.total_cmp(&a.score))
                .then_with(|| a.prop_id.cmp(&b.prop_id))
        });
        out
    }

    /// Same keys with every score passed through `f`.
    pub fn map_scores(&self, mut f: impl FnMut(f64) -> f64) -> ScoreList {
        ScoreList {
            entries: self.entries.iter().map(|e| ScoreEntry { score: f(e.score), ..*e }).collect(),
        }
    }
}

/// Indices of `scores` in ranking order: score descending, ties by ascending
/// prop_id.
pub fn rank_order(scores: &[f64], prop_ids: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => prop_ids[a].cmp(&prop_ids[b]),
        o => o,
    });
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ZeroGainMode {
    /// Queries without any relevant impression are left out of the mean.
    #[default]
    Exclude,
    /// They count as NDCG 0.
    AsZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub k: usize,
    pub zero_gain: ZeroGainMode,
    pub gain: GainMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { k: DEFAULT_K, zero_gain: ZeroGainMode::Exclude, gain: GainMode::Exponential }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_ndcg: f64,
    /// (srch_id, NDCG@k) in dataset order; zero-gain queries appear with 0.
    pub per_query: Vec<(u64, f64)>,
    pub k: usize,
    pub zero_gain_queries: usize,
    pub zero_gain: ZeroGainMode,
    pub gain: GainMode,
}

impl EvalReport {
    pub fn included_queries(&self) -> usize {
        match self.zero_gain {
            ZeroGainMode::Exclude => self.per_query.len() - self.zero_gain_queries,
            ZeroGainMode::AsZero => self.per_query.len(),
        }
    }
}

/// Mean NDCG@k of `scores` over the labeled queries in `ds`.
pub fn evaluate(scores: &ScoreList, ds: &Dataset, opts: EvalOptions) -> Result<EvalReport> {
    if opts.k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    if !ds.is_labeled() {
        return Err(Error::Schema("evaluation needs a labeled dataset".into()));
    }
    let lookup = scores.to_map();
    let mut missing = Vec::new();
    for r in ds.rows() {
        if !lookup.contains_key(&(r.srch_id, r.prop_id)) {
            missing.push((r.srch_id, r.prop_id));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }

    let mut per_query = Vec::with_capacity(ds.n_groups());
    let mut zero = 0;
    let mut sum = 0.0;
    for g in ds.groups() {
        let s: Vec<f64> = g.impressions().iter().map(|r| lookup[&(r.srch_id, r.prop_id)]).collect();
        let p: Vec<u64> = g.impressions().iter().map(|r| r.prop_id).collect();
        let grades: Vec<Grade> = g.grades().collect();
        let ranked: Vec<Grade> = rank_order(&s, &p).into_iter().map(|i| grades[i]).collect();
        let n = ndcg_at_k_with(&ranked, opts.k, opts.gain);
        if n.degenerate {
            zero += 1;
        }
        sum += n.value;
        per_query.push((g.srch_id(), n.value));
    }
    let included = match opts.zero_gain {
        ZeroGainMode::Exclude => per_query.len() - zero,
        ZeroGainMode::AsZero => per_query.len(),
    };
    let mean_ndcg = if included == 0 { 0.0 } else { sum / included as f64 };
    Ok(EvalReport {
        mean_ndcg,
        per_query,
        k: opts.k,
        zero_gain_queries: zero,
        zero_gain: opts.zero_gain,
        gain: opts.gain,
    })
}

/// NDCG@k of one query's scores against its grades with the crate's tie rule.
pub fn query_ndcg(scores: &[f64], prop_ids: &[u64], grades: &[Grade], k: usize, mode: GainMode) -> Ndcg {
    let ranked: Vec<Grade> = rank_order(scores, prop_ids).into_iter().map(|i| grades[i]).collect();
    ndcg_at_k_with(&ranked, k, mode)
}
