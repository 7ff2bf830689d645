//! `key = value` run configuration.
//!
//! Every key is declared in [`KEYS`]; an unknown or repeated key is an
//! error. An empty default means "use the model family's own default".
//! Command-line `--set key=value` overrides are checked the same way.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use ltrkit_core::ensemble::{GbmStacker, ListwiseEnsemble, Normalization};
use ltrkit_core::features::Pipeline;
use ltrkit_core::fm::{FmLoss, FmParams};
use ltrkit_core::linear::{FtrlConfig, WeightedLrConfig};
use ltrkit_core::metrics::{EvalOptions, GainMode, ZeroGainMode};
use ltrkit_core::model::{ModelConfig, DEFAULT_MIN_COUNTRY_ROWS};
use ltrkit_core::tree::{BoostLoss, BoostParams, ForestMode, ForestParams, SplitMode, TreeParams};

use crate::CliError;

pub struct KeyDef {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeyDef {
    KeyDef { name, default, help }
}

pub const KEYS: &[KeyDef] = &[
    key("seed", "1", "Seed for every random choice: sampling, tree growth, FM initialisation."),
    key("threads", "0", "Worker threads for forest and per-country training; 0 uses every core."),
    key("features", "default", "Feature preset (raw, default, ftrl-7feat, gbm-table1, fm-table2, lambdamart-table3, lambdamart-ctrcvr) or inline steps separated by `;`."),
    key("model", "lambdamart", "Model family: weighted_lr, ftrl, gbm, forest, lambdamart, fm, per_country."),
    key("eval.k", "38", "NDCG truncation depth."),
    key("eval.zero_gain", "exclude", "Queries without relevant rows: exclude (left out of the mean) or as_zero."),
    key("eval.gain", "exponential", "Gain of a grade: exponential (2^g - 1) or linear (g)."),
    key("boost.trees", "", "Boosting stages (gbm 100, lambdamart 100)."),
    key("boost.shrinkage", "", "Learning rate per stage (0.1)."),
    key("boost.loss", "", "gbm only: squared (regress on the grade) or logistic (predict clicked-or-booked)."),
    key("boost.subsample", "", "Fraction of rows (queries for lambdamart) drawn per stage (1.0)."),
    key("boost.sigma", "", "lambdamart pair-probability steepness (1.0)."),
    key("boost.early_stopping", "0", "lambdamart: stop after this many stages without validation gain; 0 disables. Uses srch_id % 10 == 1 of the training file for validation."),
    key("tree.max_depth", "", "Tree depth (boosting 4, forest 10)."),
    key("tree.min_samples_leaf", "", "Minimum rows per leaf (10)."),
    key("tree.feature_subsample", "", "Fraction of features tried at each node (boosting 1.0, forest 0.5)."),
    key("tree.split", "", "Threshold choice: best, or random (one uniform threshold per feature)."),
    key("forest.trees", "", "Trees in the forest (100)."),
    key("forest.mode", "rf", "rf (bootstrap random forest) or ert (extremely randomized trees, no bootstrap)."),
    key("lr.alpha", "auto", "Positive-class weight; auto uses #negatives / #positives."),
    key("lr.learning_rate", "", "Gradient-descent step (0.5)."),
    key("lr.epochs", "", "Full-batch gradient steps (300)."),
    key("lr.l2", "", "L2 penalty (1e-4)."),
    key("ftrl.alpha", "", "FTRL per-coordinate learning-rate scale (0.05)."),
    key("ftrl.beta", "", "FTRL learning-rate smoothing (1.0)."),
    key("ftrl.l1", "", "FTRL L1 strength (0.01)."),
    key("ftrl.l2", "", "FTRL L2 strength (0.1)."),
    key("ftrl.epochs", "", "Passes over the training data (3)."),
    key("ftrl.pairwise", "", "true trains on within-query difference vectors, false on rows (true)."),
    key("ftrl.pair_cap", "", "Maximum pairs drawn per query (100)."),
    key("fm.k", "", "Latent factor size (8)."),
    key("fm.learning_rate", "", "SGD step (0.01)."),
    key("fm.epochs", "", "Passes over the training data (10)."),
    key("fm.l2_w", "", "L2 penalty on linear weights (1e-4)."),
    key("fm.l2_v", "", "L2 penalty on latent factors (1e-4)."),
    key("fm.init_std", "", "Standard deviation of the latent initialisation (0.01)."),
    key("fm.loss", "", "logistic (predict clicked-or-booked) or squared (regress on the grade)."),
    key("country.base", "weighted_lr", "per_country: family of each country's model."),
    key("country.fallback", "weighted_lr", "per_country: family of the all-data fallback model."),
    key("country.min_rows", "200", "per_country: countries with fewer rows use the fallback."),
    key("stack.normalize", "global_z", "Score normalisation before stacking or blending: global_z, query_z, none."),
    key("stack.trees", "", "Stacker stages (gbm stacker 120, listwise 100)."),
    key("stack.extras", "prop_location_score1,prop_location_score2,price_usd", "Raw columns fed to the gbm stacker next to the scores; `none` for scores only."),
    key("stack.listwise", "false", "true fits a listwise LambdaMART ensemble instead of the gbm stacker."),
    key("run.train", "train.csv", "run: labeled training file; srch_id % 10 == 1 becomes validation."),
    key("run.output", "out", "run: output directory."),
    key("run.models", "lambdamart,weighted_lr,gbm", "run: comma-separated models, each `family` or `family@features`."),
    key("run.weights", "", "run: blend weights in run.models order; empty means equal weights."),
    key("run.grid", "0", "run: grid-search blend weights in steps of 1/N on validation; 0 uses run.weights."),
];

fn lookup(name: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if cfg.values.contains_key(k) {
                return Err(CliError::usage(format!("config line {}: `{k}` set twice", no + 1)));
            }
            cfg.set(k, v.trim()).with_context(|| format!("config line {}", no + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if lookup(key).is_none() {
            return Err(CliError::usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| CliError::usage(format!("`{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(v) => v,
            None => lookup(key).unwrap_or_else(|| panic!("unregistered key {key}")).default,
        }
    }

    /// `None` for an empty value.
    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let raw = self.get(key);
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse()
            .map(Some)
            .map_err(|_| CliError::usage(format!("config `{key}`: cannot parse `{raw}`")))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T> {
        self.opt(key)?.ok_or_else(|| CliError::usage(format!("config `{key}` needs a value")))
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<Option<T>> {
        let raw = self.get(key);
        if raw.is_empty() {
            return Ok(None);
        }
        options.iter().find(|(n, _)| *n == raw).map(|(_, v)| Some(*v)).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            CliError::usage(format!("config `{key}`: `{raw}` is not one of {}", names.join(", ")))
        })
    }

    pub fn seed(&self) -> Result<u64> {
        self.num("seed")
    }

    pub fn threads(&self) -> Result<usize> {
        self.num("threads")
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        let d = EvalOptions::default();
        let k: usize = self.num("eval.k")?;
        if k == 0 {
            return Err(CliError::usage("eval.k must be at least 1"));
        }
        Ok(EvalOptions {
            k,
            zero_gain: self
                .choice("eval.zero_gain", &[("exclude", ZeroGainMode::Exclude), ("as_zero", ZeroGainMode::AsZero)])?
                .unwrap_or(d.zero_gain),
            gain: self.choice("eval.gain", &[("exponential", GainMode::Exponential), ("linear", GainMode::Linear)])?.unwrap_or(d.gain),
        })
    }

    pub fn features(&self) -> Result<Pipeline> {
        parse_features(self.get("features"))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.family(self.get("model"))
    }

    fn tree_params(&self, mut t: TreeParams) -> Result<TreeParams> {
        if let Some(v) = self.opt("tree.max_depth")? {
            t.max_depth = v;
        }
        if let Some(v) = self.opt("tree.min_samples_leaf")? {
            t.min_samples_leaf = v;
        }
        if let Some(v) = self.opt("tree.feature_subsample")? {
            t.feature_subsample = v;
        }
        if let Some(v) = self.choice("tree.split", &[("best", SplitMode::Best), ("random", SplitMode::RandomThreshold)])? {
            t.split_mode = v;
        }
        Ok(t)
    }

    fn boost_params(&self, mut p: BoostParams, trees_key: &str) -> Result<BoostParams> {
        p.seed = self.seed()?;
        p.k = self.eval_options()?.k;
        if let Some(v) = self.opt(trees_key)? {
            p.n_trees = v;
        }
        if let Some(v) = self.opt("boost.shrinkage")? {
            p.shrinkage = v;
        }
        if let Some(v) = self.opt("boost.subsample")? {
            p.subsample = v;
        }
        if let Some(v) = self.opt("boost.sigma")? {
            p.sigma = v;
        }
        p.tree = self.tree_params(p.tree)?;
        Ok(p)
    }

    /// Builds a model configuration of the named family from this config.
    pub fn family(&self, kind: &str) -> Result<ModelConfig> {
        let seed = self.seed()?;
        Ok(match kind {
            "weighted_lr" => {
                let mut c = WeightedLrConfig::default();
                c.alpha = match self.get("lr.alpha") {
                    "auto" | "" => None,
                    _ => Some(self.num("lr.alpha")?),
                };
                if let Some(v) = self.opt("lr.learning_rate")? {
                    c.learning_rate = v;
                }
                if let Some(v) = self.opt("lr.epochs")? {
                    c.epochs = v;
                }
                if let Some(v) = self.opt("lr.l2")? {
                    c.l2 = v;
                }
                ModelConfig::WeightedLr(c)
            }
            "ftrl" => {
                let mut c = FtrlConfig { seed, ..FtrlConfig::default() };
                for (key, slot) in [("ftrl.alpha", &mut c.alpha), ("ftrl.beta", &mut c.beta), ("ftrl.l1", &mut c.l1), ("ftrl.l2", &mut c.l2)] {
                    if let Some(v) = self.opt(key)? {
                        *slot = v;
                    }
                }
                if let Some(v) = self.opt("ftrl.epochs")? {
                    c.epochs = v;
                }
                if let Some(v) = self.opt("ftrl.pairwise")? {
                    c.pairwise = v;
                }
                if let Some(v) = self.opt("ftrl.pair_cap")? {
                    c.pair_cap = v;
                }
                ModelConfig::Ftrl(c)
            }
            "gbm" => {
                let mut p = self.boost_params(BoostParams::default(), "boost.trees")?;
                if let Some(l) = self.choice("boost.loss", &[("squared", BoostLoss::Squared), ("logistic", BoostLoss::Logistic)])? {
                    p.loss = l;
                }
                ModelConfig::Gbm(p)
            }
            "lambdamart" => {
                let mut p = self.boost_params(BoostParams::lambdarank(), "boost.trees")?;
                let patience: usize = self.num("boost.early_stopping")?;
                p.early_stopping = (patience > 0).then_some(patience);
                ModelConfig::LambdaMart(p)
            }
            "forest" => {
                let mode = self.choice("forest.mode", &[("rf", ForestMode::BootstrapRf), ("ert", ForestMode::Ert)])?.unwrap_or(ForestMode::BootstrapRf);
                let mut p = match mode {
                    ForestMode::BootstrapRf => ForestParams::default(),
                    ForestMode::Ert => ForestParams::ert(),
                };
                p.seed = seed;
                if let Some(v) = self.opt("forest.trees")? {
                    p.n_trees = v;
                }
                p.tree = self.tree_params(p.tree)?;
                ModelConfig::Forest(p)
            }
            "fm" => {
                let mut p = FmParams { seed, ..FmParams::default() };
                if let Some(v) = self.opt("fm.k")? {
                    p.k = v;
                }
                if let Some(v) = self.opt("fm.epochs")? {
                    p.epochs = v;
                }
                for (key, slot) in [
                    ("fm.learning_rate", &mut p.learning_rate),
                    ("fm.l2_w", &mut p.l2_w),
                    ("fm.l2_v", &mut p.l2_v),
                    ("fm.init_std", &mut p.init_std),
                ] {
                    if let Some(v) = self.opt(key)? {
                        *slot = v;
                    }
                }
                if let Some(l) = self.choice("fm.loss", &[("logistic", FmLoss::Logistic), ("squared", FmLoss::Squared)])? {
                    p.loss = l;
                }
                ModelConfig::Fm(p)
            }
            "per_country" => {
                let base = self.get("country.base");
                let fallback = self.get("country.fallback");
                if base == "per_country" || fallback == "per_country" {
                    return Err(CliError::usage("per_country models cannot nest"));
                }
                ModelConfig::PerCountry {
                    base: Box::new(self.family(base)?),
                    fallback: Box::new(self.family(fallback)?),
                    min_rows: self.opt("country.min_rows")?.unwrap_or(DEFAULT_MIN_COUNTRY_ROWS),
                    seed,
                }
            }
            other => return Err(CliError::usage(format!("unknown model family `{other}`"))),
        })
    }

    pub fn normalization(&self) -> Result<Normalization> {
        let raw = self.get("stack.normalize");
        Normalization::parse(raw).ok_or_else(|| CliError::usage(format!("config `stack.normalize`: unknown mode `{raw}`")))
    }

    pub fn listwise(&self) -> Result<bool> {
        self.num("stack.listwise")
    }

    /// Boosting parameters for the stacker; `listwise` picks the lambdarank defaults.
    pub fn stack_params(&self, listwise: bool) -> Result<BoostParams> {
        let base = if listwise { ListwiseEnsemble::default_params() } else { GbmStacker::default_params() };
        let mut p = BoostParams { seed: self.seed()?, k: self.eval_options()?.k, ..base };
        if let Some(v) = self.opt("stack.trees")? {
            p.n_trees = v;
        }
        Ok(p)
    }

    pub fn stack_extras(&self) -> Vec<String> {
        let raw = self.get("stack.extras");
        if raw == "none" || raw.is_empty() {
            return Vec::new();
        }
        raw.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    }

    /// `(family, features)` per entry of `run.models`.
    pub fn run_models(&self) -> Result<Vec<(String, Pipeline)>> {
        let mut out = Vec::new();
        for item in self.get("run.models").split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (family, features) = match item.split_once('@') {
                Some((f, p)) => (f, parse_features(p)?),
                None => (item, self.features()?),
            };
            self.family(family)?;
            out.push((family.to_string(), features));
        }
        if out.is_empty() {
            return Err(CliError::usage("run.models is empty"));
        }
        Ok(out)
    }

    pub fn run_weights(&self, n: usize) -> Result<Vec<f64>> {
        let raw = self.get("run.weights");
        if raw.trim().is_empty() {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let w: Vec<f64> = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| CliError::usage(format!("run.weights `{raw}` is not a list of numbers")))?;
        if w.len() != n {
            return Err(CliError::usage(format!("run.weights has {} values for {n} models", w.len())));
        }
        Ok(w)
    }

    /// Every key with its help text and default, all commented out.
    pub fn annotated_example() -> String {
        let mut out = String::from(
            "# ltrkit run configuration.\n# One `key=value` per line; `#` starts a comment.\n\
             # Unknown or repeated keys are errors. An empty default means the\n\
             # model family's own default (shown in parentheses).\n",
        );
        let mut section = "";
        for k in KEYS {
            let s = k.name.split_once('.').map_or("", |(s, _)| s);
            if s != section {
                section = s;
                let _ = writeln!(out, "\n# [{s}]");
            }
            let _ = writeln!(out, "\n# {}", k.help);
            let _ = writeln!(out, "# {} = {}", k.name, k.default);
        }
        out
    }
}

fn parse_features(text: &str) -> Result<Pipeline> {
    match Pipeline::preset(text) {
        Some(p) => Ok(p),
        None => text.parse().map_err(|e| CliError::usage(format!("features `{text}`: {e}"))),
    }
}
