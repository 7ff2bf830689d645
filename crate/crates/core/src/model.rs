//! One configuration enum and one fitted-model enum covering every model
//! family, so callers can train, persist and score any of them uniformly.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::ensemble::zscore_by_query;
use crate::features::FeatureMatrix;
use crate::fm::{fit_fm, FittedFm, FmLoss, FmParams};
use crate::linear::{fit_ftrl, fit_weighted_lr, FtrlConfig, LinearModel, WeightedLrConfig};
use crate::math::seeded_rng;
use crate::metrics::{ScoreEntry, ScoreList};
use crate::schema::{balanced_keep, Grade};
use crate::tree::{forest_fit, gbm_fit, lambdamart_fit, BoostLoss, BoostParams, ForestModel, ForestParams, GbmModel, RankData};
use crate::{Error, Result};

/// Country pieces with fewer raw rows than this use the fallback model.
pub const DEFAULT_MIN_COUNTRY_ROWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelConfig {
    WeightedLr(WeightedLrConfig),
    Ftrl(FtrlConfig),
    /// Squared loss regresses on the grade value; logistic on "clicked or booked".
    Gbm(BoostParams),
    Forest(ForestParams),
    LambdaMart(BoostParams),
    Fm(FmParams),
    /// One `base` model per country, trained on balanced rows, with a
    /// `fallback` trained on everything.
    PerCountry { base: Box<ModelConfig>, fallback: Box<ModelConfig>, min_rows: usize, seed: u64 },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::WeightedLr(_) => "weighted_lr",
            ModelConfig::Ftrl(_) => "ftrl",
            ModelConfig::Gbm(_) => "gbm",
            ModelConfig::Forest(_) => "forest",
            ModelConfig::LambdaMart(_) => "lambdamart",
            ModelConfig::Fm(_) => "fm",
            ModelConfig::PerCountry { .. } => "per_country",
        }
    }

    pub fn fit(&self, m: &FeatureMatrix, grades: &[Grade]) -> Result<FittedModel> {
        self.fit_with_validation(m, grades, None)
    }

    /// Like [`fit`](Self::fit); LambdaMART also tracks NDCG on `valid`.
    pub fn fit_with_validation(
        &self,
        m: &FeatureMatrix,
        grades: &[Grade],
        valid: Option<(&FeatureMatrix, &[Grade])>,
    ) -> Result<FittedModel> {
        if grades.len() != m.n_rows() {
            return Err(Error::Dimension { expected: m.n_rows(), found: grades.len() });
        }
        if m.n_rows() == 0 || m.n_cols() == 0 {
            return Err(Error::Argument("cannot fit a model on an empty feature matrix".into()));
        }
        let (x, d) = (m.data(), m.n_cols());
        let positive = || grades.iter().map(|g| g.is_positive()).collect::<Vec<bool>>();
        let model = match self {
            ModelConfig::WeightedLr(cfg) => FittedModel::Linear(fit_weighted_lr(x, d, &positive(), cfg)?.model),
            ModelConfig::Ftrl(cfg) => FittedModel::Linear(fit_ftrl(x, d, grades, &m.query_ranges(), cfg)?),
            ModelConfig::Gbm(p) => {
                let targets: Vec<f64> = match p.loss {
                    BoostLoss::Logistic => positive().into_iter().map(|b| b as u8 as f64).collect(),
                    _ => grades.iter().map(|g| g.value() as f64).collect(),
                };
                FittedModel::Gbm(gbm_fit(x, d, &targets, p)?)
            }
            ModelConfig::Forest(p) => {
                let targets: Vec<f64> = positive().into_iter().map(|b| b as u8 as f64).collect();
                FittedModel::Forest(forest_fit(x, d, &targets, p)?)
            }
            ModelConfig::LambdaMart(p) => {
                let p = BoostParams { loss: BoostLoss::LambdaRank, ..*p };
                let ranges = m.query_ranges();
                let pids: Vec<u64> = m.keys().iter().map(|k| k.prop_id).collect();
                let train = RankData { x, d, grades, ranges: &ranges, prop_ids: &pids, init: None };
                let vparts = valid.map(|(vm, vg)| (vm, vg, vm.query_ranges(), vm.keys().iter().map(|k| k.prop_id).collect::<Vec<_>>()));
                let vdata = vparts.as_ref().map(|(vm, vg, r, p)| RankData {
                    x: vm.data(),
                    d: vm.n_cols(),
                    grades: vg,
                    ranges: r,
                    prop_ids: p,
                    init: None,
                });
                FittedModel::Gbm(lambdamart_fit(&train, vdata.as_ref(), &p)?)
            }
            ModelConfig::Fm(p) => {
                let targets: Vec<f64> = match p.loss {
                    FmLoss::Logistic => positive().into_iter().map(|b| b as u8 as f64).collect(),
                    FmLoss::Squared => grades.iter().map(|g| g.value() as f64).collect(),
                };
                FittedModel::Fm(fit_fm(x, d, &targets, p)?.fitted)
            }
            ModelConfig::PerCountry { base, fallback, min_rows, seed } => {
                let fallback = fallback.fit(m, grades)?;
                per_country_fit(m, grades, base, fallback, *min_rows, *seed)?
            }
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Linear(LinearModel),
    Gbm(GbmModel),
    Forest(ForestModel),
    Fm(FittedFm),
    PerCountry { models: BTreeMap<u32, FittedModel>, fallback: Box<FittedModel> },
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        match self {
            FittedModel::Linear(m) => m.n_features(),
            FittedModel::Gbm(m) => m.n_features,
            FittedModel::Forest(m) => m.n_features,
            FittedModel::Fm(m) => m.model.n_features(),
            FittedModel::PerCountry { fallback, .. } => fallback.n_features(),
        }
    }

    /// Raw scores in matrix row order.
    pub fn score_rows(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        if m.n_cols() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), found: m.n_cols() });
        }
        match self {
            FittedModel::Linear(lm) => lm.score_rows(m.data()),
            FittedModel::Gbm(g) => g.predict(m.data()),
            FittedModel::Forest(f) => f.predict(m.data()),
            FittedModel::Fm(f) => f.score_rows(m.data()),
            FittedModel::PerCountry { models, fallback } => {
                let ranges = m.query_ranges();
                let mut out = zscore_by_query(&fallback.score_rows(m)?, &ranges);
                for (&country, model) in models {
                    let rows: Vec<usize> = ranges
                        .iter()
                        .filter(|r| m.keys()[r.start].country == country)
                        .flat_map(|r| r.clone())
                        .collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let piece = m.take_rows(&rows);
                    let z = zscore_by_query(&model.score_rows(&piece)?, &piece.query_ranges());
                    for (&i, v) in rows.iter().zip(z) {
                        out[i] = v;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn predict(&self, m: &FeatureMatrix) -> Result<ScoreList> {
        let scores = self.score_rows(m)?;
        ScoreList::new(
            m.keys()
                .iter()
                .zip(scores)
                .map(|(k, score)| ScoreEntry { srch_id: k.srch_id, prop_id: k.prop_id, score })
                .collect(),
        )
    }
}

/// Trains `base` on each country's balanced rows. Countries whose piece has
/// fewer than `min_rows` rows (before balancing), or that balancing empties,
/// are left to `fallback`. Scores from either source are z-scored within
/// each query so that both live on one scale.
pub fn per_country_fit(
    m: &FeatureMatrix,
    grades: &[Grade],
    base: &ModelConfig,
    fallback: FittedModel,
    min_rows: usize,
    seed: u64,
) -> Result<FittedModel> {
    if matches!(base, ModelConfig::PerCountry { .. }) {
        return Err(Error::Argument("per-country models cannot nest".into()));
    }
    if fallback.n_features() != m.n_cols() {
        return Err(Error::Dimension { expected: m.n_cols(), found: fallback.n_features() });
    }
    let mut pieces: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for r in m.query_ranges() {
        pieces.entry(m.keys()[r.start].country).or_default().extend(r);
    }
    let mut rng = seeded_rng(seed);
    let mut jobs: Vec<(u32, Vec<usize>)> = Vec::new();
    for (country, rows) in pieces {
        if rows.len() < min_rows {
            log::info!("country {country}: {} rows < {min_rows}, using the fallback", rows.len());
            continue;
        }
        let piece = m.take_rows(&rows);
        let mut keep = Vec::new();
        for r in piece.query_ranges() {
            let positive: Vec<bool> = rows[r.clone()].iter().map(|&i| grades[i].is_positive()).collect();
            if let Some(mask) = balanced_keep(&positive, &mut rng) {
                keep.extend(r.zip(mask).filter(|(_, k)| *k).map(|(j, _)| rows[j]));
            }
        }
        if keep.is_empty() {
            log::info!("country {country}: no positive rows, using the fallback");
            continue;
        }
        jobs.push((country, keep));
    }
    let fitted = crate::tree::map_indices(jobs.len(), |j| {
        let (country, rows) = &jobs[j];
        let g: Vec<Grade> = rows.iter().map(|&i| grades[i]).collect();
        base.fit(&m.take_rows(rows), &g).map_err(|e| Error::Argument(format!("country {country}: {e}")))
    });
    let mut models = BTreeMap::new();
    for ((country, _), model) in jobs.iter().zip(fitted) {
        models.insert(*country, model?);
    }
    Ok(FittedModel::PerCountry { models, fallback: Box::new(fallback) })
}
