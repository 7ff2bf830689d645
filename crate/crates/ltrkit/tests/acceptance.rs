//! Acceptance checks 1-11. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ltrkit::commands::{fit_bundle, fit_stack, stack_split};
use ltrkit::config::RunConfig;
use ltrkit::export::{write_feature_tsv, write_scores};
use ltrkit::model_file::{Artifact, ModelBundle};
use ltrkit_core::ensemble::{grid_search_weights, linear_blend, ListwiseEnsemble, Normalization};
use ltrkit_core::features::{bucket, bucket_indices, dataset_grades, dataset_keys, Derived, FeatureMatrix, Pipeline, PRESETS};
use ltrkit_core::fm::{sample_gradient, sample_objective, FmLoss, FmModel, FmParams};
use ltrkit_core::linear::{weighted_lr_objective, Ftrl, FtrlConfig, WeightedLrConfig};
use ltrkit_core::metrics::{evaluate, ndcg_at_k, EvalOptions, ScoreEntry, ScoreList};
use ltrkit_core::model::ModelConfig;
use ltrkit_core::schema::{balance, generate_synthetic, split_validation, Column, Dataset, Grade, Schema, SyntheticConfig};
use ltrkit_core::tree::{lambda_gradients, BoostLoss, BoostParams, ForestParams};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_s, || format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

const GRADES: [Grade; 3] = [Grade::Irrelevant, Grade::Clicked, Grade::Booked];

/// Direct-summation DCG@k: gain 2^g - 1, discount 1 / log2(position + 1).
fn reference_dcg(grades: &[Grade], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(i32::from(g.value())) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

fn permutations(items: &[Grade]) -> Vec<Vec<Grade>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// NDCG with the ideal found by trying every ordering.
fn reference_ndcg(grades: &[Grade], k: usize) -> f64 {
    let ideal = permutations(grades).iter().map(|p| reference_dcg(p, k)).fold(0.0, f64::max);
    if ideal == 0.0 { 0.0 } else { reference_dcg(grades, k) / ideal }
}

fn all_lists(max_len: usize) -> Vec<Vec<Grade>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<Grade>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer.iter().flat_map(|l| GRADES.iter().map(move |g| [l.as_slice(), &[*g]].concat())).collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn c1_ndcg_oracle() -> Check {
    let t = Instant::now();
    let lists = all_lists(6);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for list in &lists {
        for k in 1..=7 {
            let diff = (ndcg_at_k(list, k) - reference_ndcg(list, k)).abs();
            worst = worst.max(diff);
            ensure(diff <= 1e-12, || format!("{list:?} k={k}: differs by {diff:e}"))?;
            compared += 1;
        }
        let mut perfect = list.clone();
        perfect.sort_by(|a, b| b.cmp(a));
        if perfect.iter().any(|g| g.is_positive()) {
            for k in 1..=7 {
                let v = ndcg_at_k(&perfect, k);
                ensure(v == 1.0, || format!("perfect ordering {perfect:?} k={k} gives {v}"))?;
            }
        }
    }
    within(t.elapsed(), 10)?;
    Ok(format!("{} lists, {compared} comparisons, max diff {worst:.1e}", lists.len()))
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 { diff } else { diff / scale }
}

fn central_difference(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut p = params.to_vec();
            p[i] = params[i] + h;
            let up = f(&p);
            p[i] = params[i] - h;
            (up - f(&p)) / (2.0 * h)
        })
        .collect()
}

fn fm_flat(m: &FmModel) -> Vec<f64> {
    [&[m.w0][..], &m.w, &m.v].concat()
}

fn fm_from_flat(flat: &[f64], d: usize, k: usize) -> FmModel {
    FmModel { w0: flat[0], w: flat[1..=d].to_vec(), v: flat[1 + d..].to_vec(), k }
}

fn random_fm(rng: &mut StdRng, d: usize, k: usize) -> FmModel {
    let mut m = FmModel::zeros(d, k);
    m.w0 = rng.random_range(-1.0..1.0);
    m.w.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    m.v.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    m
}

fn c2_gradient_checks() -> Check {
    let t = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst_lr: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=20);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let params: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let alpha = rng.random_range(0.5..20.0);
        let l2 = rng.random_range(0.0..0.1);
        let (_, grad) = weighted_lr_objective(&params, &x, &y, alpha, l2);
        let numeric = central_difference(&params, 1e-5, |p| weighted_lr_objective(p, &x, &y, alpha, l2).0);
        let e = relative_error(&grad, &numeric);
        worst_lr = worst_lr.max(e);
        ensure(e < 1e-5, || format!("LR relative error {e:e}"))?;
    }
    let mut worst_fm: f64 = 0.0;
    for i in 0..100 {
        let d = rng.random_range(1..=10);
        let k = rng.random_range(1..=4);
        let m = random_fm(&mut rng, d, k);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let loss = if i % 2 == 0 { FmLoss::Logistic } else { FmLoss::Squared };
        let y = if loss == FmLoss::Logistic { f64::from(rng.random_bool(0.5) as u8) } else { rng.random_range(-2.0..2.0) };
        let p = FmParams { k, loss, l2_w: rng.random_range(0.0..0.1), l2_v: rng.random_range(0.0..0.1), ..FmParams::default() };
        let grad = fm_flat(&sample_gradient(&m, &x, y, &p).map_err(|e| e.to_string())?);
        let numeric = central_difference(&fm_flat(&m), 1e-5, |f| sample_objective(&fm_from_flat(f, d, k), &x, y, &p).unwrap());
        let e = relative_error(&grad, &numeric);
        worst_fm = worst_fm.max(e);
        ensure(e < 1e-4, || format!("FM relative error {e:e}"))?;
    }
    within(t.elapsed(), 30)?;
    Ok(format!("max relative error LR {worst_lr:.1e}, FM {worst_fm:.1e}"))
}

fn c3_fm_interaction() -> Check {
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=10);
        let k = rng.random_range(1..=4);
        let m = random_fm(&mut rng, d, k);
        let x: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-3.0..3.0) }).collect();
        let mut brute = m.w0 + m.w.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
        for i in 0..d {
            for j in i + 1..d {
                let dot: f64 = (0..k).map(|f| m.v[i * k + f] * m.v[j * k + f]).sum();
                brute += dot * x[i] * x[j];
            }
        }
        let fast = m.predict(&x).map_err(|e| e.to_string())?;
        let diff = (fast - brute).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-10, || format!("d={d} k={k}: {fast} vs {brute}"))?;
    }
    Ok(format!("1000 instances, max diff {worst:.1e}"))
}

/// Pair enumeration with each swap's NDCG change found by recomputing NDCG.
fn reference_lambdas(scores: &[f64], grades: &[Grade], k: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let ndcg = |ord: &[usize]| {
        let ranked: Vec<Grade> = ord.iter().map(|&i| grades[i]).collect();
        let mut ideal = ranked.clone();
        ideal.sort_by(|a, b| b.cmp(a));
        let best = reference_dcg(&ideal, k);
        if best == 0.0 { 0.0 } else { reference_dcg(&ranked, k) / best }
    };
    let base = ndcg(&order);
    let (mut lam, mut hes) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        for j in 0..n {
            if grades[i] <= grades[j] {
                continue;
            }
            let mut swapped = order.clone();
            let pi = order.iter().position(|&x| x == i).unwrap();
            let pj = order.iter().position(|&x| x == j).unwrap();
            swapped.swap(pi, pj);
            let delta = (ndcg(&swapped) - base).abs();
            let rho = 1.0 / (1.0 + (sigma * (scores[i] - scores[j])).exp());
            lam[i] += sigma * rho * delta;
            lam[j] -= sigma * rho * delta;
            hes[i] += sigma * sigma * rho * (1.0 - rho) * delta;
            hes[j] += sigma * sigma * rho * (1.0 - rho) * delta;
        }
    }
    (lam, hes)
}

fn c4_lambda_gradients() -> Check {
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for trial in 0..2000 {
        let n = rng.random_range(1..=8);
        let grades: Vec<Grade> = (0..n).map(|_| GRADES[rng.random_range(0..3)]).collect();
        let scores: Vec<f64> = (0..n)
            .map(|_| if trial % 5 == 0 { f64::from(rng.random_range(0..3u8)) } else { rng.random_range(-3.0..3.0) })
            .collect();
        let k = rng.random_range(1..=10);
        let sigma = if trial % 2 == 0 { 1.0 } else { rng.random_range(0.25..3.0) };
        let (lam, hes) = lambda_gradients(&scores, &grades, k, sigma);
        let (rl, rh) = reference_lambdas(&scores, &grades, k, sigma);
        for i in 0..n {
            let diff = (lam[i] - rl[i]).abs().max((hes[i] - rh[i]).abs());
            worst = worst.max(diff);
            ensure(diff <= 1e-12, || format!("trial {trial}: doc {i} lambda {} vs {}", lam[i], rl[i]))?;
        }
        let total: f64 = lam.iter().sum();
        ensure(total == 0.0, || format!("trial {trial}: lambdas sum to {total:e}"))?;
    }
    Ok(format!("2000 queries, max diff {worst:.1e}, every sum exactly 0"))
}

fn c5_ftrl_trace() -> Check {
    let cfg = FtrlConfig { alpha: 1.0, beta: 1.0, l1: 0.0, l2: 0.0, ..FtrlConfig::default() };
    let mut f = Ftrl::new(1, &cfg).map_err(|e| e.to_string())?;
    f.update_coordinate(0, 1.0);
    ensure(f.weight(0) == -0.5, || format!("w = {}", f.weight(0)))?;
    let mut sparse = Ftrl::new(3, &FtrlConfig { l1: 1.5, ..cfg }).map_err(|e| e.to_string())?;
    sparse.update_coordinate(0, 1.0);
    sparse.update_coordinate(1, -0.7);
    sparse.update_coordinate(2, 4.0);
    ensure(sparse.weight(0) == 0.0 && sparse.weight(1) == 0.0, || format!("weights {:?}", sparse.weights()))?;
    // z = 4, n = 16: w = -(4 - 1.5) / ((1 + 4) / 1) = -0.5
    ensure(sparse.weight(2) == -0.5, || format!("outside the band w = {}", sparse.weight(2)))?;
    Ok("w = -0.5 exactly; |z| <= l1 gives exact zeros".into())
}

fn random_scores(rng: &mut StdRng, queries: u64) -> ScoreList {
    let mut entries = Vec::new();
    for q in 1..=queries {
        for p in 0..rng.random_range(1..=30u64) {
            entries.push(ScoreEntry { srch_id: q, prop_id: q * 1000 + p, score: rng.random_range(-5.0..5.0) });
        }
    }
    ScoreList::new(entries).unwrap()
}

fn rankings(list: &ScoreList) -> Vec<(u64, u64)> {
    list.sorted().iter().map(|e| (e.srch_id, e.prop_id)).collect()
}

fn c6_zscore_invariance() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    for trial in 0..200 {
        let s = random_scores(&mut rng, 20);
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let b = rng.random_range(-1000.0..1000.0);
        let moved = s.map_scores(|v| a * v + b);
        let one = |l: &ScoreList| linear_blend(&[("s".into(), l.clone())], &[1.0], Normalization::GlobalZ).unwrap();
        ensure(rankings(&one(&s)) == rankings(&one(&moved)), || format!("trial {trial}: single input, a={a} b={b}"))?;
        ensure(rankings(&one(&moved)) == rankings(&s), || format!("trial {trial}: blend differs from the input ranking"))?;
        let other = s.map_scores(|v| (v * 7.3).sin());
        let w = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        let two = |l: &ScoreList| {
            linear_blend(&[("s".into(), l.clone()), ("t".into(), other.clone())], &w, Normalization::GlobalZ).unwrap()
        };
        ensure(rankings(&two(&s)) == rankings(&two(&moved)), || format!("trial {trial}: two inputs, a={a} b={b}"))?;
    }
    Ok("200 random lists, a in [1e-3, 1e3], one and two inputs".into())
}

fn fixture_ndcg(scores: &ScoreList, ds: &Dataset) -> f64 {
    evaluate(scores, ds, EvalOptions::default()).unwrap().mean_ndcg
}

fn c7_synthetic_learning() -> Check {
    let t = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig::standard()).map_err(|e| e.to_string())?;
    let rate = ds.rows().filter(|r| r.grade().is_positive()).count() as f64 / ds.n_rows() as f64;
    let (train, valid) = split_validation(&ds);
    let features = Pipeline::preset("default").unwrap();
    let lm_cfg = ModelConfig::LambdaMart(BoostParams { n_trees: 100, ..BoostParams::lambdarank() });
    let lm = fit_bundle(&train, &features, &lm_cfg, 1).map_err(|e| e.to_string())?;
    let lr = fit_bundle(&train, &features, &ModelConfig::WeightedLr(WeightedLrConfig::default()), 1).map_err(|e| e.to_string())?;
    let lm_ndcg = fixture_ndcg(&lm.predict(&valid).map_err(|e| e.to_string())?, &valid);
    let lr_ndcg = fixture_ndcg(&lr.predict(&valid).map_err(|e| e.to_string())?, &valid);
    let mut rng = StdRng::seed_from_u64(1);
    let random = ScoreList::new(dataset_keys(&valid).iter().map(|k| ScoreEntry { srch_id: k.srch_id, prop_id: k.prop_id, score: rng.random() }).collect()).unwrap();
    let rand_ndcg = fixture_ndcg(&random, &valid);
    let detail = format!("positive rate {rate:.4}; NDCG@38 lambdamart {lm_ndcg:.4}, weighted LR {lr_ndcg:.4}, random {rand_ndcg:.4}");
    ensure(lm_ndcg - rand_ndcg >= 0.10, || format!("{detail}: margin over random {:.4}", lm_ndcg - rand_ndcg))?;
    ensure(lm_ndcg - lr_ndcg >= 0.01, || format!("{detail}: margin over weighted LR {:.4} < 0.01", lm_ndcg - lr_ndcg))?;
    within(t.elapsed(), 180)?;
    Ok(detail)
}

fn c8_ensemble_lift() -> Check {
    let ds = generate_synthetic(&SyntheticConfig::new(20_000, 25, 20, 1)).map_err(|e| e.to_string())?;
    let (train, valid) = split_validation(&ds);
    let (stack_fit, holdout) = stack_split(&valid);
    let subsets = [("price", "select price_usd,prop_location_score1"), ("quality", "select prop_starrating,prop_location_score2")];
    let mut fit_inputs = Vec::new();
    let mut hold_inputs = Vec::new();
    for (name, features) in subsets {
        let b = fit_bundle(&train, &features.parse().unwrap(), &ModelConfig::WeightedLr(WeightedLrConfig::default()), 1)
            .map_err(|e| e.to_string())?;
        fit_inputs.push((name.to_string(), b.predict(&stack_fit).map_err(|e| e.to_string())?));
        hold_inputs.push((name.to_string(), b.predict(&holdout).map_err(|e| e.to_string())?));
    }
    let opts = EvalOptions::default();
    let (weights, _) = grid_search_weights(&fit_inputs, &stack_fit, Normalization::GlobalZ, 20, opts).map_err(|e| e.to_string())?;
    let blend = fixture_ndcg(&linear_blend(&hold_inputs, &weights, Normalization::GlobalZ).unwrap(), &holdout);
    let listwise = ListwiseEnsemble::fit(&fit_inputs, &stack_fit, Normalization::GlobalZ, &ListwiseEnsemble::default_params())
        .map_err(|e| e.to_string())?;
    let lw = fixture_ndcg(&listwise.predict(&hold_inputs, &dataset_keys(&holdout)).unwrap(), &holdout);
    let singles: Vec<f64> = hold_inputs.iter().map(|(_, s)| fixture_ndcg(s, &holdout)).collect();
    let best = singles.iter().copied().fold(f64::MIN, f64::max);
    let detail = format!(
        "holdout NDCG@38 singles {:.4}/{:.4}, blend {blend:.4} (weights {weights:?}), listwise {lw:.4}",
        singles[0], singles[1]
    );
    ensure(blend > best, || format!("{detail}: blend not above best single"))?;
    ensure(lw >= blend - 0.005, || format!("{detail}: listwise below blend - 0.005"))?;
    Ok(detail)
}

fn mutate_labels(ds: &Dataset) -> Dataset {
    ds.map_labels(|r| (!r.click, !r.click && r.prop_id % 3 == 0))
}

fn unlabeled(ds: &Dataset) -> Dataset {
    Dataset::new(ds.groups().to_vec(), Schema { labeled: false, ..*ds.schema() }).unwrap()
}

fn matrix_bytes(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    write_feature_tsv(m, &mut out).unwrap();
    out
}

fn score_bytes(s: &ScoreList) -> Vec<u8> {
    let mut out = Vec::new();
    write_scores(s, &mut out).unwrap();
    out
}

fn c9_pipeline_hygiene() -> Check {
    let ds = generate_synthetic(&SyntheticConfig::new(400, 15, 4, 9)).map_err(|e| e.to_string())?;
    let (train, valid) = split_validation(&ds);
    let variants = [mutate_labels(&valid), unlabeled(&valid)];
    ensure(dataset_grades(&variants[0]) != dataset_grades(&valid), || "mutation left labels unchanged".into())?;
    for (name, _) in PRESETS {
        let fitted = Pipeline::preset(name).unwrap().fit(&train, &[&unlabeled(&valid)], 3).map_err(|e| e.to_string())?;
        let base = matrix_bytes(&fitted.apply(&valid).unwrap());
        for v in &variants {
            ensure(matrix_bytes(&fitted.apply(v).unwrap()) == base, || format!("preset {name}: features depend on labels"))?;
        }
    }
    let quick = BoostParams { n_trees: 15, ..BoostParams::default() };
    let families = [
        ModelConfig::WeightedLr(WeightedLrConfig::default()),
        ModelConfig::Ftrl(FtrlConfig::default()),
        ModelConfig::Gbm(quick),
        ModelConfig::Gbm(BoostParams { loss: BoostLoss::Logistic, ..quick }),
        ModelConfig::LambdaMart(BoostParams { n_trees: 15, ..BoostParams::lambdarank() }),
        ModelConfig::Forest(ForestParams { n_trees: 10, ..ForestParams::default() }),
        ModelConfig::Forest(ForestParams { n_trees: 10, ..ForestParams::ert() }),
        ModelConfig::Fm(FmParams { epochs: 3, ..FmParams::default() }),
        RunConfig::default().family("per_country").map_err(|e| e.to_string())?,
    ];
    let features = Pipeline::preset("lambdamart-ctrcvr").unwrap();
    let mut bases: Vec<(String, ModelBundle)> = Vec::new();
    let mut checked = 0;
    for (i, cfg) in families.iter().enumerate() {
        let b = fit_bundle(&train, &features, cfg, 5).map_err(|e| e.to_string())?;
        let base = score_bytes(&b.predict(&valid).unwrap());
        for v in &variants {
            ensure(score_bytes(&b.predict(v).unwrap()) == base, || format!("{} predictions depend on labels", cfg.kind()))?;
        }
        checked += 1;
        if i < 3 {
            bases.push((format!("b{i}"), b));
        }
    }
    for listwise in [false, true] {
        let mut cfg = RunConfig::default();
        cfg.set("stack.trees", "10").unwrap();
        let (stack, _) = fit_stack(bases.clone(), &valid, &cfg, listwise, false).map_err(|e| e.to_string())?;
        let art = Artifact::Stack(stack);
        let base = score_bytes(&art.predict(&valid).unwrap());
        for v in &variants {
            ensure(score_bytes(&art.predict(v).unwrap()) == base, || format!("stack (listwise={listwise}) depends on labels"))?;
        }
        checked += 1;
    }
    Ok(format!("{} presets and {checked} fitted models unchanged under label mutation and removal", PRESETS.len()))
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ltrkit"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Every CLI command once, against the standard fixture; returns stdout per step.
fn cli_session(dir: &Path, threads: &str) -> Result<Vec<Vec<u8>>, String> {
    let mut outputs = Vec::new();
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen", "--queries", "2000", "--per-query", "25", "--seed", "1", "-o", "data"],
        vec!["featurize", "--fit", "data/train.csv", "--data", "data/test.csv", "-o", "features.tsv"],
        vec!["featurize", "--fit", "data/train.csv", "--format", "ranking", "--set", "features=fm-table2", "-o", "train.rank"],
        vec!["train", "--train", "data/train.csv", "-o", "lm.model"],
        vec!["train", "--train", "data/train.csv", "-o", "lr.model", "--set", "model=weighted_lr"],
        vec!["train", "--train", "data/train.csv", "-o", "rf.model", "--set", "model=forest", "--set", "forest.trees=30"],
        vec!["train", "--train", "data/train.csv", "-o", "fm.model", "--set", "model=fm", "--set", "features=fm-table2"],
        vec!["train", "--train", "data/train.csv", "-o", "pc.model", "--set", "model=per_country", "--set", "country.min_rows=300"],
        vec!["predict", "-m", "lm.model", "--data", "data/test_labels.csv", "--labeled", "-o", "lm.tsv"],
        vec!["predict", "-m", "rf.model", "--data", "data/test_labels.csv", "--labeled", "-o", "rf.tsv"],
        vec!["predict", "-m", "pc.model", "--data", "data/test.csv", "-o", "pc.tsv"],
        vec!["eval", "--scores", "lm.tsv", "--data", "data/test_labels.csv", "--per-query"],
        vec!["blend", "--spec", "two.spec", "-o", "blend.tsv"],
        vec!["blend", "--spec", "two.spec", "--grid", "10", "--data", "data/test_labels.csv", "-o", "grid.tsv"],
        vec!["stack", "--base", "lm=lm.model", "--base", "lr=lr.model", "--data", "data/test_labels.csv", "-o", "stack.model"],
        vec!["stack", "--listwise", "--base", "lm=lm.model", "--base", "fm=fm.model", "--data", "data/test_labels.csv", "-o", "listwise.model"],
        vec!["predict", "-m", "stack.model", "--data", "data/test.csv", "-o", "stack.tsv"],
        vec!["run", "-c", "run.conf"],
    ];
    fs::write(dir.join("two.spec"), "input lm lm.tsv\ninput rf rf.tsv\nnormalize query_z\nweight lm 0.7\nweight rf 0.3\n").unwrap();
    fs::write(dir.join("run.conf"), "run.train = data/train.csv\nrun.output = out\nrun.grid = 10\n").unwrap();
    for step in steps {
        let mut args = step.clone();
        args.extend(["--threads", threads]);
        outputs.push(cli(dir, &args)?);
    }
    Ok(outputs)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c10_determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let t = Instant::now();
    let out_a = cli_session(a.path(), "4")?;
    let session = t.elapsed();
    let out_b = cli_session(b.path(), "4")?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    ensure(fa.keys().eq(fb.keys()), || "the two runs wrote different file sets".into())?;
    for (name, bytes) in &fa {
        ensure(fb[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    for (i, (x, y)) in out_a.iter().zip(&out_b).enumerate() {
        ensure(x == y, || format!("stdout of step {} differs", i + 1))?;
    }
    let single = tempfile::tempdir().unwrap();
    fs::create_dir(single.path().join("data")).unwrap();
    fs::copy(a.path().join("data/train.csv"), single.path().join("data/train.csv")).unwrap();
    cli(single.path(), &["train", "--train", "data/train.csv", "-o", "rf.model", "--set", "model=forest", "--set", "forest.trees=30", "--threads", "1"])?;
    ensure(fs::read(single.path().join("rf.model")).unwrap() == fa["rf.model"], || "forest differs between 1 and 4 threads".into())?;
    within(session, 300)?;
    Ok(format!("{} files and {} stdout streams identical; one full session {:.1}s", fa.len(), out_a.len(), session.as_secs_f64()))
}

fn c11_procedure_spot_checks() -> Check {
    let ds = generate_synthetic(&SyntheticConfig::standard()).map_err(|e| e.to_string())?;
    let (train, valid) = split_validation(&ds);
    ensure(valid.query_ids().iter().all(|q| q % 10 == 1), || "validation holds a query with srch_id % 10 != 1".into())?;
    ensure(train.query_ids().iter().all(|q| q % 10 != 1), || "training holds a query with srch_id % 10 == 1".into())?;
    ensure(train.n_groups() + valid.n_groups() == ds.n_groups(), || "split loses queries".into())?;

    let balanced = balance(&ds, 11);
    let before: BTreeMap<u64, (usize, usize)> = ds
        .groups()
        .iter()
        .map(|g| (g.srch_id(), (g.grades().filter(|x| x.is_positive()).count(), g.grades().filter(|x| !x.is_positive()).count())))
        .collect();
    let (mut pos, mut neg, mut exhausted) = (0, 0, 0);
    for g in balanced.groups() {
        let p = g.grades().filter(|x| x.is_positive()).count();
        let n = g.len() - p;
        let (p0, n0) = before[&g.srch_id()];
        ensure(p == p0, || format!("query {}: positives changed", g.srch_id()))?;
        if n0 < p0 {
            ensure(n == n0, || format!("query {}: exhausted negatives not all kept", g.srch_id()))?;
            exhausted += p0 - n0;
        } else {
            ensure(n == p, || format!("query {}: {p} positives vs {n} negatives", g.srch_id()))?;
        }
        pos += p;
        neg += n;
    }
    ensure(pos - neg == exhausted, || format!("{pos} positives, {neg} negatives, {exhausted} exhausted"))?;

    let values: Vec<f64> = ds.rows().filter_map(|r| r.get(Column::PriceUsd)).collect();
    for n in [1, 2, 5, 8, 16] {
        for row in bucket(&values, n).map_err(|e| e.to_string())? {
            ensure(row.iter().map(|&v| u32::from(v)).sum::<u32>() == 1 && row.iter().all(|&v| v <= 1), || format!("bucket row {row:?} is not one-hot"))?;
        }
    }
    ensure(bucket_indices(&[1.0, 2.0, 3.0, 4.0], 2).unwrap() == vec![0, 0, 1, 1], || "bucket([1,2,3,4], 2) != buckets 1,1,2,2".into())?;
    let fm2 = Pipeline::preset("fm-table2").unwrap().fit(&train, &[], 0).unwrap().apply(&valid).unwrap();
    for prefix in ["prop_id_cnt_b", "srch_destination_id_cnt_b", "srch_room_count_b", "srch_booking_window_b"] {
        let idx: Vec<usize> = fm2.columns().iter().enumerate().filter(|(_, c)| c.starts_with(prefix)).map(|(i, _)| i).collect();
        for r in 0..fm2.n_rows() {
            let s: f64 = idx.iter().map(|&j| fm2.row(r)[j]).sum();
            ensure(s == 1.0, || format!("{prefix}* row {r} sums to {s}"))?;
        }
    }

    let with = |pairs: &[(Column, f64)]| {
        let map: BTreeMap<Column, f64> = pairs.iter().copied().collect();
        Derived::compute(|c| map.get(&c).copied().unwrap_or(1.0))
    };
    let d = with(&[(Column::PropLogHistoricalPrice, 4.6), (Column::PriceUsd, 90.0)]);
    ensure((d.ump - 9.4843).abs() < 5e-5, || format!("ump = {}", d.ump))?;
    let d = with(&[(Column::PriceUsd, 100.0), (Column::SrchRoomCount, 2.0), (Column::SrchAdultsCount, 2.0), (Column::SrchChildrenCount, 2.0)]);
    ensure(d.per_fee == 50.0 && d.total_fee == 200.0, || format!("per_fee {} total_fee {}", d.per_fee, d.total_fee))?;
    let d = with(&[(Column::PropLocationScore2, 0.2), (Column::PropLocationScore1, 1.0)]);
    ensure((d.score1d2 - 0.200080).abs() < 5e-7, || format!("score1d2 = {}", d.score1d2))?;
    Ok(format!("{} validation queries; {pos} positives vs {neg} negatives after balancing ({exhausted} exhausted)", valid.n_groups()))
}

fn main() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("NDCG oracle equivalence", c1_ndcg_oracle),
        ("gradient checks", c2_gradient_checks),
        ("FM linear-time interaction", c3_fm_interaction),
        ("lambda-gradient correctness", c4_lambda_gradients),
        ("FTRL single-step trace", c5_ftrl_trace),
        ("z-score invariance", c6_zscore_invariance),
        ("synthetic learning check", c7_synthetic_learning),
        ("ensemble lift", c8_ensemble_lift),
        ("pipeline hygiene", c9_pipeline_hygiene),
        ("determinism", c10_determinism),
        ("procedure spot checks", c11_procedure_spot_checks),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS {name} ({detail}; {secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} ({why}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
