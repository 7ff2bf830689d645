//! Combining score lists: z-score normalisation, weighted blends, a GBM
//! stacker over held-out scores and a listwise LambdaMART ensemble.
//!
//! All combiners take named inputs and order them by name, so the order in
//! which inputs are supplied never changes a result.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};

use crate::features::{dataset_grades, dataset_keys, FeatureMatrix, RowKey};
use crate::math::{mean, population_std};
use crate::metrics::{evaluate, query_ndcg, EvalOptions, GainMode, ScoreEntry, ScoreList};
use crate::schema::Dataset;
use crate::tree::{gbm_fit, lambdamart_fit, BoostLoss, BoostParams, GbmModel, RankData};
use crate::{Error, Result};

/// Extra raw columns the stacker sees next to the model scores by default.
pub const DEFAULT_STACK_EXTRAS: [&str; 3] = ["prop_location_score1", "prop_location_score2", "price_usd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    None,
    #[default]
    GlobalZ,
    QueryZ,
}

impl Normalization {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Normalization::None),
            "global_z" => Some(Normalization::GlobalZ),
            "query_z" => Some(Normalization::QueryZ),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::GlobalZ => "global_z",
            Normalization::QueryZ => "query_z",
        }
    }
}

/// `(x - mean) / sd` with the population sd; a constant input maps to zeros.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    let m = mean(values);
    let sd = population_std(values);
    if sd > 0.0 {
        values.iter().map(|v| (v - m) / sd).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// [`zscore`] applied separately to each range.
pub fn zscore_by_query(values: &[f64], ranges: &[Range<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in ranges {
        out[r.clone()].copy_from_slice(&zscore(&values[r.clone()]));
    }
    out
}

/// Normalises a score list; per-query statistics group entries by srch_id
/// wherever they appear in the list.
pub fn normalize(list: &ScoreList, mode: Normalization) -> ScoreList {
    let values: Vec<f64> = list.scores().collect();
    let out = match mode {
        Normalization::None => values,
        Normalization::GlobalZ => zscore(&values),
        Normalization::QueryZ => {
            let mut by_query: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, e) in list.entries().iter().enumerate() {
                by_query.entry(e.srch_id).or_default().push(i);
            }
            let mut out = vec![0.0; values.len()];
            for idx in by_query.values() {
                let z = zscore(&idx.iter().map(|&i| values[i]).collect::<Vec<_>>());
                for (&i, v) in idx.iter().zip(z) {
                    out[i] = v;
                }
            }
            out
        }
    };
    let mut i = 0;
    list.map_scores(|_| {
        i += 1;
        out[i - 1]
    })
}

/// Inputs sorted by name; duplicate names are rejected.
fn canonical(inputs: &[(String, ScoreList)]) -> Result<Vec<&(String, ScoreList)>> {
    if inputs.is_empty() {
        return Err(Error::Argument("at least one score input is required".into()));
    }
    let mut sorted: Vec<&(String, ScoreList)> = inputs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Argument(format!("duplicate score input `{}`", w[0].0)));
    }
    Ok(sorted)
}

/// Each input's values at `keys`, or the pairs some input lacks.
fn align(inputs: &[&(String, ScoreList)], keys: &[(u64, u64)], mode: Normalization) -> Result<Vec<Vec<f64>>> {
    let mut missing = BTreeSet::new();
    let mut out = Vec::with_capacity(inputs.len());
    for (_, list) in inputs {
        let map = normalize(list, mode).to_map();
        let mut col = Vec::with_capacity(keys.len());
        for k in keys {
            match map.get(k) {
                Some(&v) => col.push(v),
                None => {
                    missing.insert(*k);
                    col.push(0.0);
                }
            }
        }
        out.push(col);
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::MissingScores(missing.into_iter().collect()))
    }
}

/// Checks that all inputs cover the same (srch_id, prop_id) pairs.
fn common_keys(inputs: &[&(String, ScoreList)]) -> Result<Vec<(u64, u64)>> {
    let first = inputs[0].1.keys();
    let mut missing = BTreeSet::new();
    for (_, list) in &inputs[1..] {
        let other = list.keys();
        missing.extend(first.symmetric_difference(&other).copied());
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing.into_iter().collect()));
    }
    Ok(inputs[0].1.entries().iter().map(|e| (e.srch_id, e.prop_id)).collect())
}

/// Per row, the weighted sum of the normalised inputs. `weights` follow the
/// order of `inputs`; output rows follow the first input's order.
pub fn linear_blend(inputs: &[(String, ScoreList)], weights: &[f64], mode: Normalization) -> Result<ScoreList> {
    if weights.len() != inputs.len() {
        return Err(Error::Dimension { expected: inputs.len(), found: weights.len() });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Argument("blend weights must be finite".into()));
    }
    let refs: Vec<&(String, ScoreList)> = inputs.iter().collect();
    canonical(inputs)?;
    let keys = common_keys(&refs)?;
    let cols = align(&refs, &keys, mode)?;
    let entries = keys
        .iter()
        .enumerate()
        .map(|(i, &(srch_id, prop_id))| ScoreEntry {
            srch_id,
            prop_id,
            score: cols.iter().zip(weights).map(|(c, w)| w * c[i]).sum(),
        })
        .collect();
    ScoreList::new(entries)
}

/// Exhaustive search over weights on the simplex grid `{0, 1/steps, ..., 1}`
/// scored by mean NDCG on `ds`. Ties keep the first vector in enumeration
/// order, which starts from all weight on the last input.
pub fn grid_search_weights(
    inputs: &[(String, ScoreList)],
    ds: &Dataset,
    mode: Normalization,
    steps: usize,
    opts: EvalOptions,
) -> Result<(Vec<f64>, f64)> {
    let n = inputs.len();
    if steps == 0 || n == 0 {
        return Err(Error::Argument("grid search needs inputs and steps >= 1".into()));
    }
    let combos = binomial(steps + n - 1, n - 1);
    if combos > 50_000 {
        return Err(Error::Argument(format!("weight grid has {combos} points; use fewer inputs or steps")));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut parts = vec![0usize; n];
    parts[n - 1] = steps;
    loop {
        let weights: Vec<f64> = parts.iter().map(|&p| p as f64 / steps as f64).collect();
        let score = evaluate(&linear_blend(inputs, &weights, mode)?, ds, opts)?.mean_ndcg;
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((weights, score));
        }
        if !next_composition(&mut parts) {
            break;
        }
    }
    Ok(best.expect("grid is non-empty"))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Steps through all compositions of a fixed total into `parts.len()` parts.
fn next_composition(parts: &mut [usize]) -> bool {
    let n = parts.len();
    if n < 2 {
        return false;
    }
    // Move one unit from the last non-zero part (excluding index 0) one slot left.
    let Some(i) = (1..n).rev().find(|&i| parts[i] > 0) else { return false };
    let tail = parts[i] - 1;
    parts[i] = 0;
    parts[i - 1] += 1;
    parts[n - 1] += tail;
    true
}

/// Refuses stacking on queries the base models were trained on.
pub fn check_leakage(base_train: &BTreeSet<u64>, stacking: &BTreeSet<u64>, allow: bool) -> Result<()> {
    let overlap = base_train.intersection(stacking).count();
    if overlap == 0 {
        return Ok(());
    }
    if allow {
        log::warn!("{overlap} stacking queries were seen by a base model; continuing as requested");
        Ok(())
    } else {
        Err(Error::Leakage { overlapping_queries: overlap })
    }
}

/// Row-major [scores | extras] at `keys`, inputs in name order.
fn stack_matrix(
    inputs: &[&(String, ScoreList)],
    extras: Option<(&FeatureMatrix, &[String])>,
    keys: &[RowKey],
    mode: Normalization,
) -> Result<(Vec<f64>, usize)> {
    let pairs: Vec<(u64, u64)> = keys.iter().map(|k| (k.srch_id, k.prop_id)).collect();
    let mut cols = align(inputs, &pairs, mode)?;
    if let Some((m, names)) = extras {
        if m.keys() != keys {
            return Err(Error::Schema("extra feature rows do not match the scored rows".into()));
        }
        for name in names {
            cols.push(m.column(name)?);
        }
    }
    let d = cols.len();
    let mut x = Vec::with_capacity(keys.len() * d);
    for r in 0..keys.len() {
        x.extend(cols.iter().map(|c| c[r]));
    }
    Ok((x, d))
}

fn to_score_list(keys: &[RowKey], scores: Vec<f64>) -> Result<ScoreList> {
    if let Some(first) = scores.first() {
        if scores.iter().all(|s| s == first) {
            log::warn!("ensemble output is constant; every ranking falls back to prop_id order");
        }
    }
    ScoreList::new(
        keys.iter()
            .zip(scores)
            .map(|(k, score)| ScoreEntry { srch_id: k.srch_id, prop_id: k.prop_id, score })
            .collect(),
    )
}

fn input_names(inputs: &[&(String, ScoreList)]) -> Vec<String> {
    inputs.iter().map(|(n, _)| n.clone()).collect()
}

fn check_names(expected: &[String], inputs: &[&(String, ScoreList)]) -> Result<()> {
    let got = input_names(inputs);
    if got != expected {
        return Err(Error::Schema(format!("ensemble expects inputs {expected:?}, got {got:?}")));
    }
    Ok(())
}

/// Pointwise GBM over held-out model scores (plus optional raw columns),
/// trained to predict clicks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmStacker {
    pub inputs: Vec<String>,
    pub extras: Vec<String>,
    pub normalization: Normalization,
    pub model: GbmModel,
}

impl GbmStacker {
    pub fn default_params() -> BoostParams {
        BoostParams { n_trees: 120, loss: BoostLoss::Logistic, ..BoostParams::default() }
    }

    /// `extras`, when given, must hold one row per `ds` row in dataset order.
    pub fn fit(
        inputs: &[(String, ScoreList)],
        extras: Option<(&FeatureMatrix, &[String])>,
        ds: &Dataset,
        mode: Normalization,
        params: &BoostParams,
    ) -> Result<Self> {
        if !ds.is_labeled() {
            return Err(Error::Schema("stacking needs labeled data".into()));
        }
        let sorted = canonical(inputs)?;
        let keys = dataset_keys(ds);
        let (x, d) = stack_matrix(&sorted, extras, &keys, mode)?;
        let clicks: Vec<f64> = ds.rows().map(|r| r.click as u8 as f64).collect();
        let model = gbm_fit(&x, d, &clicks, params)?;
        Ok(GbmStacker {
            inputs: input_names(&sorted),
            extras: extras.map(|(_, n)| n.to_vec()).unwrap_or_default(),
            normalization: mode,
            model,
        })
    }

    pub fn predict(&self, inputs: &[(String, ScoreList)], extras: Option<&FeatureMatrix>, keys: &[RowKey]) -> Result<ScoreList> {
        let sorted = canonical(inputs)?;
        check_names(&self.inputs, &sorted)?;
        let extras = match (extras, self.extras.is_empty()) {
            (_, true) => None,
            (Some(m), false) => Some((m, self.extras.as_slice())),
            (None, false) => return Err(Error::Schema("stacker needs its extra feature columns".into())),
        };
        let (x, _) = stack_matrix(&sorted, extras, keys, self.normalization)?;
        to_score_list(keys, self.model.predict(&x)?)
    }
}

/// LambdaMART over normalised model scores. Boosting starts from the input
/// with the best NDCG on the fitting data, so the trees learn corrections
/// to the strongest single model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListwiseEnsemble {
    pub inputs: Vec<String>,
    pub normalization: Normalization,
    pub init_input: usize,
    pub model: GbmModel,
}

impl ListwiseEnsemble {
    pub fn default_params() -> BoostParams {
        BoostParams { n_trees: 100, ..BoostParams::lambdarank() }
    }

    pub fn fit(inputs: &[(String, ScoreList)], ds: &Dataset, mode: Normalization, params: &BoostParams) -> Result<Self> {
        if !ds.is_labeled() {
            return Err(Error::Schema("the listwise ensemble needs labeled data".into()));
        }
        if params.loss != BoostLoss::LambdaRank {
            return Err(Error::Argument("the listwise ensemble boosts with the lambdarank loss".into()));
        }
        let sorted = canonical(inputs)?;
        let keys = dataset_keys(ds);
        let (x, d) = stack_matrix(&sorted, None, &keys, mode)?;
        let grades = dataset_grades(ds);
        let prop_ids: Vec<u64> = keys.iter().map(|k| k.prop_id).collect();
        let ranges = crate::features::query_ranges(&keys);
        let ndcg_of = |col: usize| {
            let s: Vec<f64> = x.chunks_exact(d).map(|r| r[col]).collect();
            let (mut sum, mut used) = (0.0, 0usize);
            for r in &ranges {
                let v = query_ndcg(&s[r.clone()], &prop_ids[r.clone()], &grades[r.clone()], params.k, GainMode::Exponential);
                if !v.degenerate {
                    sum += v.value;
                    used += 1;
                }
            }
            sum / used.max(1) as f64
        };
        let mut init_input = 0;
        let mut best = f64::NEG_INFINITY;
        for c in 0..d {
            let v = ndcg_of(c);
            if v > best {
                (init_input, best) = (c, v);
            }
        }
        let init: Vec<f64> = x.chunks_exact(d).map(|r| r[init_input]).collect();
        let data = RankData { x: &x, d, grades: &grades, ranges: &ranges, prop_ids: &prop_ids, init: Some(&init) };
        let model = lambdamart_fit(&data, None, params)?;
        Ok(ListwiseEnsemble { inputs: input_names(&sorted), normalization: mode, init_input, model })
    }

    pub fn predict(&self, inputs: &[(String, ScoreList)], keys: &[RowKey]) -> Result<ScoreList> {
        let sorted = canonical(inputs)?;
        check_names(&self.inputs, &sorted)?;
        let (x, d) = stack_matrix(&sorted, None, keys, self.normalization)?;
        let trees = self.model.predict(&x)?;
        let scores = x.chunks_exact(d).zip(trees).map(|(r, t)| r[self.init_input] + t).collect();
        to_score_list(keys, scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::rank_order;
    use crate::schema::{generate_synthetic, SyntheticConfig};
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn list(rows: &[(u64, u64, f64)]) -> ScoreList {
        ScoreList::new(rows.iter().map(|&(s, p, v)| ScoreEntry { srch_id: s, prop_id: p, score: v }).collect()).unwrap()
    }

    fn rankings(l: &ScoreList) -> BTreeMap<u64, Vec<u64>> {
        let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for e in l.sorted() {
            out.entry(e.srch_id).or_default().push(e.prop_id);
        }
        out
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&[1.0, 2.0, 3.0]);
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expect).abs() < 1e-12 && z[1] == 0.0 && (z[2] - expect).abs() < 1e-12);
        assert!((expect - 1.224745).abs() < 5e-7);
        assert_eq!(zscore(&[4.0; 5]), vec![0.0; 5]);
        let again = zscore(&z);
        for (a, b) in z.iter().zip(again) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn query_z_has_zero_mean_unit_variance() {
        let l = list(&[(1, 1, 3.0), (2, 5, 1.0), (1, 2, 5.0), (2, 6, 1.0), (1, 3, 10.0)]);
        let z = normalize(&l, Normalization::QueryZ);
        let q1: Vec<f64> = z.entries().iter().filter(|e| e.srch_id == 1).map(|e| e.score).collect();
        assert!(mean(&q1).abs() < 1e-15);
        assert!((population_std(&q1) - 1.0).abs() < 1e-12);
        assert!(z.entries().iter().filter(|e| e.srch_id == 2).all(|e| e.score == 0.0));
    }

    #[test]
    fn blend_projection_and_symmetry() {
        let a = list(&[(1, 1, 0.3), (1, 2, 0.9), (1, 3, 0.1), (2, 4, 2.0), (2, 5, -1.0)]);
        let b = list(&[(1, 1, 5.0), (1, 2, 1.0), (1, 3, 3.0), (2, 4, 0.0), (2, 5, 7.0)]);
        let inputs = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
        let out = linear_blend(&inputs, &[1.0, 0.0], Normalization::GlobalZ).unwrap();
        assert_eq!(rankings(&out), rankings(&a));
        let twins = vec![("a".to_string(), b.clone()), ("b".to_string(), b.clone())];
        let out = linear_blend(&twins, &[0.5, 0.5], Normalization::GlobalZ).unwrap();
        assert_eq!(rankings(&out), rankings(&b));
    }

    #[test]
    fn blend_reports_missing_pairs() {
        let a = list(&[(1, 1, 0.3), (1, 2, 0.9)]);
        let b = list(&[(1, 1, 0.3), (1, 3, 0.9)]);
        let err = linear_blend(&[("a".into(), a), ("b".into(), b)], &[1.0, 1.0], Normalization::None).unwrap_err();
        assert_eq!(err, Error::MissingScores(vec![(1, 2), (1, 3)]));
    }

    #[test]
    fn composition_walk_covers_the_simplex() {
        let mut parts = vec![0, 0, 4];
        let mut seen = vec![parts.clone()];
        while next_composition(&mut parts) {
            assert_eq!(parts.iter().sum::<usize>(), 4);
            seen.push(parts.clone());
        }
        assert_eq!(seen.len(), binomial(6, 2));
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 15);
    }

    #[test]
    fn leakage_is_refused_unless_allowed() {
        let a: BTreeSet<u64> = [1, 2, 3].into_iter().collect();
        let b: BTreeSet<u64> = [3, 4].into_iter().collect();
        assert_eq!(check_leakage(&a, &b, false), Err(Error::Leakage { overlapping_queries: 1 }));
        assert!(check_leakage(&a, &b, true).is_ok());
        assert!(check_leakage(&a, &[9].into_iter().collect(), false).is_ok());
    }

    fn utility_fixture() -> (Dataset, ScoreList, ScoreList) {
        let ds = generate_synthetic(&SyntheticConfig::new(400, 20, 5, 11)).unwrap();
        let keys = dataset_keys(&ds);
        let util: Vec<f64> = ds
            .rows()
            .map(|r| {
                let g = |c| r.get(c).unwrap_or(0.0);
                use crate::schema::Column::*;
                -0.01 * g(PriceUsd) + 0.5 * g(PropStarrating) + 3.0 * g(PropLocationScore2) + 0.2 * g(PropLocationScore1)
            })
            .collect();
        let mk = |vals: &[f64]| {
            ScoreList::new(keys.iter().zip(vals).map(|(k, &v)| ScoreEntry { srch_id: k.srch_id, prop_id: k.prop_id, score: v }).collect())
                .unwrap()
        };
        let noise: Vec<f64> = (0..keys.len()).map(|i| ((i * 7919 + 13) % 1009) as f64 / 1009.0).collect();
        (ds, mk(&util), mk(&noise))
    }

    #[test]
    fn listwise_is_order_insensitive_and_keeps_a_dominant_input() {
        let (ds, util, noise) = utility_fixture();
        let keys = dataset_keys(&ds);
        let p = BoostParams { n_trees: 20, ..ListwiseEnsemble::default_params() };
        let fwd = vec![("a".to_string(), util.clone()), ("b".to_string(), noise.clone())];
        let rev = vec![fwd[1].clone(), fwd[0].clone()];
        let e1 = ListwiseEnsemble::fit(&fwd, &ds, Normalization::QueryZ, &p).unwrap();
        let e2 = ListwiseEnsemble::fit(&rev, &ds, Normalization::QueryZ, &p).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.init_input, 0);
        assert_eq!(e1.predict(&fwd, &keys).unwrap(), e2.predict(&rev, &keys).unwrap());
        let opts = EvalOptions::default();
        let single = evaluate(&util, &ds, opts).unwrap().mean_ndcg;
        let ens = evaluate(&e1.predict(&fwd, &keys).unwrap(), &ds, opts).unwrap().mean_ndcg;
        assert!(ens >= single - 0.005, "{ens} vs {single}");
    }

    #[test]
    fn stacker_with_zero_trees_is_constant() {
        let (ds, util, _) = utility_fixture();
        let inputs = vec![("u".to_string(), util)];
        let p = BoostParams { n_trees: 0, ..GbmStacker::default_params() };
        let s = GbmStacker::fit(&inputs, None, &ds, Normalization::GlobalZ, &p).unwrap();
        let out = s.predict(&inputs, None, &dataset_keys(&ds)).unwrap();
        let first = out.entries()[0].score;
        assert!(out.scores().all(|v| v == first));
        assert!(s.predict(&[("v".to_string(), out.clone())], None, &dataset_keys(&ds)).is_err());
    }

    proptest! {
        #[test]
        fn global_z_blend_is_affine_invariant(
            scores in proptest::collection::vec(-100.0f64..100.0, 12),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
        ) {
            let rows: Vec<(u64, u64, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as u64 / 4, i as u64, s)).collect();
            let base = list(&rows);
            let moved = base.map_scores(|s| a * s + b);
            let x = linear_blend(&[("m".into(), base)], &[1.0], Normalization::GlobalZ).unwrap();
            let y = linear_blend(&[("m".into(), moved)], &[1.0], Normalization::GlobalZ).unwrap();
            let pid: Vec<u64> = x.entries().iter().map(|e| e.prop_id).collect();
            for q in 0..3usize {
                let r = q * 4..q * 4 + 4;
                let xs: Vec<f64> = x.entries()[r.clone()].iter().map(|e| e.score).collect();
                let ys: Vec<f64> = y.entries()[r.clone()].iter().map(|e| e.score).collect();
                prop_assert_eq!(rank_order(&xs, &pid[r.clone()]), rank_order(&ys, &pid[r]));
            }
        }
    }
}
