//! Ordered feature transforms fitted on a training split and applied to
//! any split.
//!
//! Every raw column the dataset carries is imputed (per-country first
//! quartile) before the listed steps run, so applied matrices never hold
//! missing values. Steps read earlier columns by name and append new ones.
//! Unless the pipeline ends in `select`, the output is every raw column
//! followed by the appended columns; the id columns (`srch_id`, `prop_id`,
//! `prop_country_id`) are available to steps and to `select` only.
//!
//! Text form, one step per line or separated by `;`:
//!
//! ```text
//! rank <column> asc|desc        listwise rank within the query
//! qnorm <column>                 z-score within the query
//! derived                        ump, price_diff, ... score1d2
//! composite <col> <col>          injective integer pairing
//! count <column>                 one-way count over train + extra sets
//! ctrcvr prop_id | price [n]     click/booking rates per key
//! bucket <column> <n>            one-hot quantile buckets
//! lr_score | fm_score            visitor/query-only model scores
//! select a,b,prefix*             final column selection
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use super::matrix::{query_ranges, FeatureMatrix, RowKey};
use super::transforms::{
    composite, rank_values, BucketThresholds, CountKey, CountTable, CtrCvrTable, CtrKeyKind, Derived,
    Direction, QuartileImputer, DERIVED_NAMES,
};
use crate::fm::{fit_fm, FittedFm, FmParams};
use crate::linear::{fit_weighted_lr, LinearModel, WeightedLrConfig};
use crate::schema::{Column, Dataset, SearchImpression};
use crate::{Error, Result};

const ID_COLUMNS: [&str; 3] = ["srch_id", "prop_id", "prop_country_id"];

/// Named pipelines, one per model recipe.
pub const PRESETS: &[(&str, &str)] = &[
    ("raw", ""),
    (
        "default",
        "derived; rank price_usd asc; rank prop_starrating desc; rank prop_location_score2 desc; \
         rank price_diff desc; composite srch_room_count srch_booking_window",
    ),
    (
        "ftrl-7feat",
        "select srch_id,prop_id,srch_destination_id,prop_starrating,prop_location_score1,\
         prop_location_score2,price_usd",
    ),
    (
        "gbm-table1",
        "derived; count random_bool; count srch_destination_id; count prop_id; \
         count prop_location_score2; lr_score; fm_score",
    ),
    (
        "fm-table2",
        "count prop_id; count srch_destination_id; bucket prop_id_cnt 8; \
         bucket srch_destination_id_cnt 8; bucket srch_room_count 3; bucket srch_booking_window 8; \
         derived; rank price_usd asc; rank price_diff desc; rank prop_starrating desc; \
         select prop_id_cnt_b*,srch_destination_id_cnt_b*,srch_room_count_b*,srch_booking_window_b*,\
         price_usd,prop_location_score1,prop_location_score2,price_rank,price_diff_rank,star_rank",
    ),
    (
        "lambdamart-table3",
        "derived; rank price_usd asc; rank price_diff desc; rank prop_starrating desc; lr_score; fm_score; \
         select prop_starrating,prop_location_score1,prop_location_score2,price_rank,price_diff_rank,\
         star_rank,fm_score,lr_score",
    ),
    ("lambdamart-ctrcvr", "ctrcvr prop_id; ctrcvr price 20"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Rank { source: String, dir: Direction },
    QueryNorm { source: String },
    Derived,
    Composite { first: Column, second: Column },
    Count(CountKey),
    CtrCvr { kind: CtrKeyKind, n_buckets: usize },
    Bucket { source: String, n: usize },
    LrScore,
    FmScore,
    Select(Vec<String>),
}

fn rank_name(source: &str) -> String {
    match source {
        "price_usd" => "price_rank".into(),
        "prop_starrating" => "star_rank".into(),
        "prop_location_score2" => "score2_rank".into(),
        other => format!("{other}_rank"),
    }
}

fn composite_name(first: Column, second: Column) -> String {
    match (first, second) {
        (Column::SrchRoomCount, Column::SrchBookingWindow) => "count_window".into(),
        (a, b) => format!("{}_x_{}", a.name(), b.name()),
    }
}

fn ctr_names(kind: CtrKeyKind) -> [&'static str; 2] {
    match kind {
        CtrKeyKind::PropId => ["ctr_prop_id", "cvr_prop_id"],
        CtrKeyKind::Price => ["ctr_price", "cvr_price"],
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(line: &str) -> Result<Transform> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Argument(format!("cannot parse pipeline step `{line}`"));
        let column = |name: &str| Column::from_name(name).ok_or_else(|| Error::UnknownColumn(name.into()));
        let int = |tok: &str| tok.parse::<usize>().map_err(|_| bad());
        Ok(match tokens.as_slice() {
            ["rank", source, dir] => Transform::Rank {
                source: (*source).into(),
                dir: match *dir {
                    "asc" => Direction::Asc,
                    "desc" => Direction::Desc,
                    _ => return Err(bad()),
                },
            },
            ["qnorm", source] => Transform::QueryNorm { source: (*source).into() },
            ["derived"] => Transform::Derived,
            ["composite", a, b] => Transform::Composite { first: column(a)?, second: column(b)? },
            ["count", key] => Transform::Count(CountKey::parse(key).ok_or_else(|| Error::UnknownColumn((*key).into()))?),
            ["ctrcvr", "prop_id"] => Transform::CtrCvr { kind: CtrKeyKind::PropId, n_buckets: 0 },
            ["ctrcvr", "price"] => Transform::CtrCvr { kind: CtrKeyKind::Price, n_buckets: 20 },
            ["ctrcvr", "price", n] => Transform::CtrCvr { kind: CtrKeyKind::Price, n_buckets: int(n)? },
            ["bucket", source, n] => Transform::Bucket { source: (*source).into(), n: int(n)? },
            ["lr_score"] => Transform::LrScore,
            ["fm_score"] => Transform::FmScore,
            ["select", list] => Transform::Select(list.split(',').filter(|s| !s.is_empty()).map(String::from).collect()),
            _ => return Err(bad()),
        })
    }
}

impl core::fmt::Display for Transform {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Transform::Rank { source, dir } => {
                write!(f, "rank {source} {}", if *dir == Direction::Asc { "asc" } else { "desc" })
            }
            Transform::QueryNorm { source } => write!(f, "qnorm {source}"),
            Transform::Derived => f.write_str("derived"),
            Transform::Composite { first, second } => write!(f, "composite {} {}", first.name(), second.name()),
            Transform::Count(k) => write!(f, "count {}", k.name()),
            Transform::CtrCvr { kind: CtrKeyKind::PropId, .. } => f.write_str("ctrcvr prop_id"),
            Transform::CtrCvr { kind: CtrKeyKind::Price, n_buckets } => write!(f, "ctrcvr price {n_buckets}"),
            Transform::Bucket { source, n } => write!(f, "bucket {source} {n}"),
            Transform::LrScore => f.write_str("lr_score"),
            Transform::FmScore => f.write_str("fm_score"),
            Transform::Select(cols) => write!(f, "select {}", cols.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Pipeline {
    steps: Vec<Transform>,
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(text: &str) -> Result<Pipeline> {
        let steps = text
            .split(['\n', ';'])
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#') && *l != "impute")
            .map(str::parse)
            .collect::<Result<Vec<Transform>>>()?;
        Pipeline::new(steps)
    }
}

impl core::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl Pipeline {
    pub fn new(steps: Vec<Transform>) -> Result<Self> {
        if let Some(pos) = steps.iter().position(|s| matches!(s, Transform::Select(_))) {
            if pos + 1 != steps.len() {
                return Err(Error::Argument("`select` must be the last pipeline step".into()));
            }
        }
        Ok(Pipeline { steps })
    }

    pub fn preset(name: &str) -> Option<Pipeline> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| text.parse().expect("presets parse"))
    }

    pub fn steps(&self) -> &[Transform] {
        &self.steps
    }

    /// Fits every step on `train`. `extra` datasets (e.g. the test set) only
    /// contribute to one-way counts and are never read for labels.
    pub fn fit(&self, train: &Dataset, extra: &[&Dataset], seed: u64) -> Result<FittedPipeline> {
        let imputers = train
            .schema()
            .columns()
            .map(|c| QuartileImputer::fit(train, c))
            .collect::<Result<Vec<_>>>()?;
        let mut fitted = FittedPipeline { imputers, steps: Vec::new(), columns: Vec::new() };
        let mut frame = fitted.base_frame(train)?;
        let needs_labels = self.steps.iter().any(|s| {
            matches!(s, Transform::CtrCvr { .. } | Transform::LrScore | Transform::FmScore)
        });
        if needs_labels && !train.is_labeled() {
            return Err(Error::Schema("pipeline has label-dependent steps but training data is unlabeled".into()));
        }
        let mut counted: Vec<&Dataset> = Vec::with_capacity(extra.len() + 1);
        counted.push(train);
        counted.extend_from_slice(extra);
        for (i, step) in self.steps.iter().enumerate() {
            let f = fit_step(step, &frame, train, &counted, crate::math::child_seed(seed, i as u64))?;
            apply_step(&f, &mut frame)?;
            fitted.steps.push(f);
        }
        fitted.columns = frame.output_names(fitted.selection())?;
        Ok(fitted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedStep {
    Rank { source: String, dir: Direction },
    QueryNorm { source: String },
    Derived,
    Composite { first: Column, second: Column, max_second: i64 },
    Count(CountTable),
    CtrCvr { kind: CtrKeyKind, table: CtrCvrTable },
    Bucket { source: String, thresholds: BucketThresholds },
    LrScore { inputs: Vec<Column>, model: LinearModel },
    FmScore { inputs: Vec<Column>, model: FittedFm },
    Select(Vec<String>),
}

/// A fitted pipeline. Applying it reads only impression features, never
/// click or booking flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    imputers: Vec<QuartileImputer>,
    steps: Vec<FittedStep>,
    columns: Vec<String>,
}

impl FittedPipeline {
    /// Output column names.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn steps(&self) -> &[FittedStep] {
        &self.steps
    }

    fn selection(&self) -> Option<&[String]> {
        match self.steps.last() {
            Some(FittedStep::Select(cols)) => Some(cols),
            _ => None,
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<FeatureMatrix> {
        let mut frame = self.base_frame(ds)?;
        for step in &self.steps {
            apply_step(step, &mut frame)?;
        }
        let names = frame.output_names(self.selection())?;
        if names != self.columns {
            return Err(Error::Schema("applied columns differ from fitted columns".into()));
        }
        let idx: Vec<usize> = names.iter().map(|n| frame.index(n)).collect::<Result<_>>()?;
        let n = frame.rows.len();
        let mut data = Vec::with_capacity(n * idx.len());
        for r in 0..n {
            data.extend(idx.iter().map(|&j| frame.cols[j][r]));
        }
        FeatureMatrix::new(names, data, frame.keys)
    }

    fn base_frame<'a>(&self, ds: &'a Dataset) -> Result<Frame<'a>> {
        let rows: Vec<&SearchImpression> = ds.rows().collect();
        let keys = super::matrix::dataset_keys(ds);
        let ranges = query_ranges(&keys);
        let mut frame = Frame { rows, keys, ranges, names: Vec::new(), cols: Vec::new() };
        frame.push("srch_id".into(), frame.rows.iter().map(|r| r.srch_id as f64).collect());
        frame.push("prop_id".into(), frame.rows.iter().map(|r| r.prop_id as f64).collect());
        frame.push("prop_country_id".into(), frame.rows.iter().map(|r| r.prop_country_id as f64).collect());
        for imp in &self.imputers {
            if !ds.schema().has(imp.column) {
                return Err(Error::Schema(format!("dataset lacks column {}", imp.column.name())));
            }
            let col = frame.rows.iter().map(|r| imp.value(r)).collect();
            frame.push(imp.column.name().into(), col);
        }
        Ok(frame)
    }
}

struct Frame<'a> {
    rows: Vec<&'a SearchImpression>,
    keys: Vec<RowKey>,
    ranges: Vec<Range<usize>>,
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
}

impl Frame<'_> {
    fn push(&mut self, name: String, col: Vec<f64>) {
        debug_assert_eq!(col.len(), self.rows.len());
        if let Some(j) = self.names.iter().position(|n| *n == name) {
            self.cols[j] = col;
        } else {
            self.names.push(name);
            self.cols.push(col);
        }
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownColumn(name.into()))
    }

    fn col(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.cols[self.index(name)?])
    }

    fn output_names(&self, selection: Option<&[String]>) -> Result<Vec<String>> {
        let Some(sel) = selection else {
            return Ok(self.names.iter().filter(|n| !ID_COLUMNS.contains(&n.as_str())).cloned().collect());
        };
        let mut out = Vec::new();
        for pattern in sel {
            if let Some(prefix) = pattern.strip_suffix('*') {
                let matched: Vec<&String> = self.names.iter().filter(|n| n.starts_with(prefix)).collect();
                if matched.is_empty() {
                    return Err(Error::UnknownColumn(pattern.clone()));
                }
                out.extend(matched.into_iter().cloned());
            } else {
                self.index(pattern)?;
                out.push(pattern.clone());
            }
        }
        Ok(out)
    }

    /// Row-major block of the given columns.
    fn block(&self, inputs: &[Column]) -> Result<Vec<f64>> {
        let cols = inputs.iter().map(|c| self.col(c.name())).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.rows.len() * cols.len());
        for r in 0..self.rows.len() {
            out.extend(cols.iter().map(|c| c[r]));
        }
        Ok(out)
    }
}

fn integral(values: &[f64], name: &str) -> Result<Vec<i64>> {
    values
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || !v.is_finite() {
                Err(Error::Argument(format!("{name} must be integral for a composite, got {v}")))
            } else {
                Ok(v as i64)
            }
        })
        .collect()
}

fn visitor_query_inputs(frame: &Frame<'_>) -> Vec<Column> {
    Column::ALL
        .into_iter()
        .filter(|c| c.is_visitor_or_query() && frame.index(c.name()).is_ok())
        .collect()
}

fn fit_step(step: &Transform, frame: &Frame<'_>, train: &Dataset, counted: &[&Dataset], seed: u64) -> Result<FittedStep> {
    Ok(match step {
        Transform::Rank { source, dir } => {
            frame.index(source)?;
            FittedStep::Rank { source: source.clone(), dir: *dir }
        }
        Transform::QueryNorm { source } => {
            frame.index(source)?;
            FittedStep::QueryNorm { source: source.clone() }
        }
        Transform::Derived => {
            for c in Derived::INPUTS {
                frame.index(c.name())?;
            }
            FittedStep::Derived
        }
        Transform::Composite { first, second } => {
            integral(frame.col(first.name())?, first.name())?;
            let seconds = integral(frame.col(second.name())?, second.name())?;
            let max_second = seconds.iter().copied().max().unwrap_or(0);
            FittedStep::Composite { first: *first, second: *second, max_second }
        }
        Transform::Count(key) => FittedStep::Count(CountTable::fit(counted, *key)),
        Transform::CtrCvr { kind, n_buckets } => {
            FittedStep::CtrCvr { kind: *kind, table: super::transforms::ctr_cvr_fit(train, *kind, *n_buckets)? }
        }
        Transform::Bucket { source, n } => {
            FittedStep::Bucket { source: source.clone(), thresholds: BucketThresholds::fit(frame.col(source)?, *n)? }
        }
        Transform::LrScore | Transform::FmScore => {
            let inputs = visitor_query_inputs(frame);
            let x = frame.block(&inputs)?;
            let labels: Vec<bool> = frame.rows.iter().map(|r| r.grade().is_positive()).collect();
            if matches!(step, Transform::LrScore) {
                let fit = fit_weighted_lr(&x, inputs.len(), &labels, &WeightedLrConfig::default())?;
                FittedStep::LrScore { inputs, model: fit.model }
            } else {
                let targets: Vec<f64> = labels.iter().map(|&b| b as u8 as f64).collect();
                let params = FmParams { k: 4, epochs: 5, seed, ..FmParams::default() };
                let fit = fit_fm(&x, inputs.len(), &targets, &params)?;
                FittedStep::FmScore { inputs, model: fit.fitted }
            }
        }
        Transform::Select(cols) => {
            frame.output_names(Some(cols))?;
            FittedStep::Select(cols.clone())
        }
    })
}

fn apply_step(step: &FittedStep, frame: &mut Frame<'_>) -> Result<()> {
    match step {
        FittedStep::Rank { source, dir } => {
            let values = frame.col(source)?;
            let mut out = alloc::vec![0.0; values.len()];
            for r in &frame.ranges {
                for (o, rank) in out[r.clone()].iter_mut().zip(rank_values(&values[r.clone()], *dir)) {
                    *o = rank as f64;
                }
            }
            frame.push(rank_name(source), out);
        }
        FittedStep::QueryNorm { source } => {
            let out = crate::ensemble::zscore_by_query(frame.col(source)?, &frame.ranges);
            frame.push(format!("{source}_qnorm"), out);
        }
        FittedStep::Derived => {
            let idx: Vec<usize> = Column::ALL.iter().map(|c| frame.index(c.name()).unwrap_or(usize::MAX)).collect();
            let mut outs: [Vec<f64>; 7] = Default::default();
            for r in 0..frame.rows.len() {
                let d = Derived::compute(|c| {
                    let j = idx[c.index()];
                    if j == usize::MAX { f64::NAN } else { frame.cols[j][r] }
                });
                for (o, v) in outs.iter_mut().zip(d.values()) {
                    o.push(v);
                }
            }
            for (name, col) in DERIVED_NAMES.iter().zip(outs) {
                frame.push((*name).to_string(), col);
            }
        }
        FittedStep::Composite { first, second, max_second } => {
            let a = integral(frame.col(first.name())?, first.name())?;
            let b = integral(frame.col(second.name())?, second.name())?;
            let out = a
                .iter()
                .zip(&b)
                .map(|(&x, &y)| composite(x, y, *max_second).map(|v| v as f64))
                .collect::<Result<Vec<f64>>>()?;
            frame.push(composite_name(*first, *second), out);
        }
        FittedStep::Count(table) => {
            let out = frame.rows.iter().map(|r| table.count(r)).collect();
            frame.push(format!("{}_cnt", table.key.name()), out);
        }
        FittedStep::CtrCvr { kind, table } => {
            let [ctr, cvr] = ctr_names(*kind);
            let a = frame.rows.iter().map(|r| table.ctr(r)).collect();
            let b = frame.rows.iter().map(|r| table.cvr(r)).collect();
            frame.push(ctr.into(), a);
            frame.push(cvr.into(), b);
        }
        FittedStep::Bucket { source, thresholds } => {
            let values = frame.col(source)?.to_vec();
            for j in 0..thresholds.n_buckets() {
                let col = values.iter().map(|&v| (thresholds.assign(v) == j) as u8 as f64).collect();
                frame.push(format!("{source}_b{}", j + 1), col);
            }
        }
        FittedStep::LrScore { inputs, model } => {
            let x = frame.block(inputs)?;
            let out = model.score_rows(&x)?;
            let out = if inputs.is_empty() { alloc::vec![model.bias; frame.rows.len()] } else { out };
            frame.push("lr_score".into(), out);
        }
        FittedStep::FmScore { inputs, model } => {
            let x = frame.block(inputs)?;
            let out = if inputs.is_empty() { alloc::vec![model.model.w0; frame.rows.len()] } else { model.score_rows(&x)? };
            frame.push("fm_score".into(), out);
        }
        FittedStep::Select(_) => {}
    }
    Ok(())
}
