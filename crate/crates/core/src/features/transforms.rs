//! Individual feature transforms.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{exp, quantile_linear};
use crate::schema::{Column, Dataset, QueryGroup, SearchImpression};
use crate::{Error, Result};

/// Quantile cut points for one-hot bucketing.
///
/// Cut `t_j` is the lower order statistic at quantile `j / n`, i.e. the
/// `ceil(j * N / n)`-th smallest training value. A value goes to the
/// smallest `j` with `value <= t_j`; values above every cut land in the
/// last bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketThresholds {
    pub thresholds: Vec<f64>,
}

impl BucketThresholds {
    pub fn fit(values: &[f64], n_buckets: usize) -> Result<Self> {
        if n_buckets == 0 {
            return Err(Error::Argument("bucket count must be >= 1".into()));
        }
        if values.is_empty() {
            return Err(Error::Argument("cannot bucket an empty feature".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument("cannot bucket NaN values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let thresholds = (1..=n_buckets)
            .map(|j| {
                let rank = (j * n).div_ceil(n_buckets).max(1);
                sorted[rank - 1]
            })
            .collect();
        Ok(BucketThresholds { thresholds })
    }

    pub fn n_buckets(&self) -> usize {
        self.thresholds.len()
    }

    /// 0-based bucket index.
    pub fn assign(&self, value: f64) -> usize {
        // thresholds are non-decreasing, so this is the first t_j >= value
        self.thresholds.partition_point(|&t| t < value).min(self.thresholds.len() - 1)
    }
}

/// 0-based bucket of every value.
pub fn bucket_indices(values: &[f64], n_buckets: usize) -> Result<Vec<usize>> {
    let t = BucketThresholds::fit(values, n_buckets)?;
    Ok(values.iter().map(|&v| t.assign(v)).collect())
}

/// One-hot bucket matrix, `values.len()` rows by `n_buckets` columns.
pub fn bucket(values: &[f64], n_buckets: usize) -> Result<Vec<Vec<u8>>> {
    Ok(bucket_indices(values, n_buckets)?
        .into_iter()
        .map(|j| {
            let mut row = alloc::vec![0u8; n_buckets];
            row[j] = 1;
            row
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Smallest value gets rank 1.
    Asc,
    /// Largest value gets rank 1.
    Desc,
}

/// 1-based ranks; ties share the minimum rank.
pub fn rank_values(values: &[f64], dir: Direction) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let better = |a: f64, b: f64| match dir {
        Direction::Asc => a.total_cmp(&b),
        Direction::Desc => b.total_cmp(&a),
    };
    idx.sort_by(|&a, &b| better(values[a], values[b]));
    let mut ranks = alloc::vec![0u32; values.len()];
    let mut current = 1u32;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && values[idx[pos - 1]] != values[i] {
            current = pos as u32 + 1;
        }
        ranks[i] = current;
    }
    ranks
}

/// Rank of `column` inside one query.
pub fn listwise_rank(group: &QueryGroup, column: &str, dir: Direction) -> Result<Vec<u32>> {
    let col = Column::from_name(column).ok_or_else(|| Error::UnknownColumn(column.into()))?;
    let values = group
        .impressions()
        .iter()
        .map(|r| {
            r.get(col).ok_or_else(|| {
                Error::Schema(format!("{column} missing in srch_id {}; impute first", r.srch_id))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rank_values(&values, dir))
}

/// Injective pairing `first * (max_second + 1) + second` of two
/// non-negative integer features.
pub fn composite(first: i64, second: i64, max_second: i64) -> Result<u64> {
    if first < 0 || second < 0 || max_second < 0 {
        return Err(Error::Argument(format!(
            "composite features must be non-negative, got ({first}, {second}, max {max_second})"
        )));
    }
    let second = second.min(max_second);
    (first as u64)
        .checked_mul(max_second as u64 + 1)
        .and_then(|v| v.checked_add(second as u64))
        .ok_or_else(|| Error::Argument("composite value overflows".into()))
}

/// Per-country first quartile (linear interpolation) used to fill gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileImputer {
    pub column: Column,
    pub per_country: BTreeMap<u32, f64>,
    pub global: f64,
}

impl QuartileImputer {
    pub fn fit(ds: &Dataset, column: Column) -> Result<Self> {
        let mut by_country: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for r in ds.rows() {
            if let Some(v) = r.get(column) {
                by_country.entry(r.prop_country_id).or_default().push(v);
                all.push(v);
            }
        }
        if all.is_empty() {
            return Err(Error::Schema(format!("{} has no observed values", column.name())));
        }
        let q1 = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            quantile_linear(&v, 0.25)
        };
        let global = q1(all);
        let per_country = by_country.into_iter().map(|(c, v)| (c, q1(v))).collect();
        Ok(QuartileImputer { column, per_country, global })
    }

    pub fn fill(&self, country: u32) -> f64 {
        self.per_country.get(&country).copied().unwrap_or(self.global)
    }

    pub fn value(&self, imp: &SearchImpression) -> f64 {
        imp.get(self.column).unwrap_or_else(|| self.fill(imp.prop_country_id))
    }
}

/// Fits the imputer on `ds` and returns the filled column in row order.
pub fn impute_missing(ds: &Dataset, column: Column) -> Result<(QuartileImputer, Vec<f64>)> {
    let imp = QuartileImputer::fit(ds, column)?;
    let filled = ds.rows().map(|r| imp.value(r)).collect();
    Ok((imp, filled))
}

pub const DERIVED_NAMES: [&str; 7] =
    ["ump", "price_diff", "starrating_diff", "per_fee", "score2ma", "total_fee", "score1d2"];

/// Hand-built price/score interactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    pub ump: f64,
    pub price_diff: f64,
    pub starrating_diff: f64,
    pub per_fee: f64,
    pub score2ma: f64,
    pub total_fee: f64,
    pub score1d2: f64,
}

impl Derived {
    pub const INPUTS: [Column; 11] = [
        Column::PropLogHistoricalPrice,
        Column::PriceUsd,
        Column::VisitorHistAdrUsd,
        Column::VisitorHistStarrating,
        Column::PropStarrating,
        Column::SrchRoomCount,
        Column::SrchAdultsCount,
        Column::SrchChildrenCount,
        Column::PropLocationScore2,
        Column::SrchQueryAffinityScore,
        Column::PropLocationScore1,
    ];

    pub fn compute(get: impl Fn(Column) -> f64) -> Derived {
        let price = get(Column::PriceUsd);
        let rooms = get(Column::SrchRoomCount);
        let guests = get(Column::SrchAdultsCount) + get(Column::SrchChildrenCount);
        let guests = if guests == 0.0 { 1.0 } else { guests };
        let score1 = get(Column::PropLocationScore1);
        let score2 = get(Column::PropLocationScore2);
        Derived {
            ump: exp(get(Column::PropLogHistoricalPrice)) - price,
            price_diff: get(Column::VisitorHistAdrUsd) - price,
            starrating_diff: get(Column::VisitorHistStarrating) - get(Column::PropStarrating),
            per_fee: price * rooms / guests,
            score2ma: score2 * get(Column::SrchQueryAffinityScore),
            total_fee: price * rooms,
            score1d2: (score2 + 0.0001) / (score1 + 0.0001),
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.ump,
            self.price_diff,
            self.starrating_diff,
            self.per_fee,
            self.score2ma,
            self.total_fee,
            self.score1d2,
        ]
    }
}

/// Derived features of one (already imputed) impression.
pub fn derived_features(imp: &SearchImpression) -> Result<Derived> {
    for col in Derived::INPUTS {
        if imp.get(col).is_none() {
            return Err(Error::Schema(format!("{} missing; impute first", col.name())));
        }
    }
    Ok(Derived::compute(|c| imp.get(c).unwrap_or(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountKey {
    PropId,
    SrchId,
    Raw(Column),
}

impl CountKey {
    pub fn parse(name: &str) -> Option<CountKey> {
        match name {
            "prop_id" => Some(CountKey::PropId),
            "srch_id" => Some(CountKey::SrchId),
            other => Column::from_name(other).map(CountKey::Raw),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CountKey::PropId => "prop_id",
            CountKey::SrchId => "srch_id",
            CountKey::Raw(c) => c.name(),
        }
    }

    fn key_of(self, imp: &SearchImpression) -> Option<u64> {
        match self {
            CountKey::PropId => Some(imp.prop_id),
            CountKey::SrchId => Some(imp.srch_id),
            CountKey::Raw(c) => imp.get(c).map(|v| (v + 0.0).to_bits()),
        }
    }
}

/// Occurrence counts of one column's values; missing values form their own
/// key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub key: CountKey,
    counts: Vec<(u64, u32)>,
    missing: u32,
}

impl CountTable {
    pub fn fit(datasets: &[&Dataset], key: CountKey) -> Self {
        let mut counts: BTreeMap<u64, u32> = BTreeMap::new();
        let mut missing = 0;
        for ds in datasets {
            for r in ds.rows() {
                match key.key_of(r) {
                    Some(k) => *counts.entry(k).or_default() += 1,
                    None => missing += 1,
                }
            }
        }
        CountTable { key, counts: counts.into_iter().collect(), missing }
    }

    /// Count for the row's value; 0 for values never seen.
    pub fn count(&self, imp: &SearchImpression) -> f64 {
        match self.key.key_of(imp) {
            Some(k) => match self.counts.binary_search_by_key(&k, |e| e.0) {
                Ok(i) => self.counts[i].1 as f64,
                Err(_) => 0.0,
            },
            None => self.missing as f64,
        }
    }
}

/// Counts taken over the union of train and test rows. Labels are not read.
pub fn count_feature(train: &Dataset, test: &Dataset, key: CountKey) -> CountTable {
    CountTable::fit(&[train, test], key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CtrKey {
    PropId,
    PriceBucket(BucketThresholds),
}

impl CtrKey {
    fn key_of(&self, imp: &SearchImpression) -> Option<u64> {
        match self {
            CtrKey::PropId => Some(imp.prop_id),
            CtrKey::PriceBucket(t) => imp.get(Column::PriceUsd).map(|p| t.assign(p) as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CtrKeyKind {
    PropId,
    Price,
}

/// Click-through and booking rates per key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrCvrTable {
    pub key: CtrKey,
    /// (key, presentations, clicks, bookings)
    stats: Vec<(u64, [u32; 3])>,
    pub global_ctr: f64,
    pub global_cvr: f64,
}

impl CtrCvrTable {
    pub fn stats(&self, key: u64) -> Option<[u32; 3]> {
        self.stats.binary_search_by_key(&key, |e| e.0).ok().map(|i| self.stats[i].1)
    }

    fn rates(&self, imp: &SearchImpression) -> (f64, f64) {
        let Some([pres, clicks, books]) = self.key.key_of(imp).and_then(|k| self.stats(k)) else {
            return (self.global_ctr, self.global_cvr);
        };
        let ctr = if pres > 0 { clicks as f64 / pres as f64 } else { self.global_ctr };
        let cvr = if clicks > 0 { books as f64 / clicks as f64 } else { self.global_cvr };
        (ctr, cvr)
    }

    pub fn ctr(&self, imp: &SearchImpression) -> f64 {
        self.rates(imp).0
    }

    pub fn cvr(&self, imp: &SearchImpression) -> f64 {
        self.rates(imp).1
    }
}

/// Fits CTR = clicks / presentations and CVR = bookings / clicks per key.
pub fn ctr_cvr_fit(train: &Dataset, kind: CtrKeyKind, n_price_buckets: usize) -> Result<CtrCvrTable> {
    if !train.is_labeled() {
        return Err(Error::Schema("CTR/CVR tables need labeled data".into()));
    }
    let key = match kind {
        CtrKeyKind::PropId => CtrKey::PropId,
        CtrKeyKind::Price => {
            let prices: Vec<f64> = train.rows().filter_map(|r| r.get(Column::PriceUsd)).collect();
            CtrKey::PriceBucket(BucketThresholds::fit(&prices, n_price_buckets)?)
        }
    };
    let mut stats: BTreeMap<u64, [u32; 3]> = BTreeMap::new();
    let (mut pres, mut clicks, mut books) = (0u64, 0u64, 0u64);
    for r in train.rows() {
        pres += 1;
        clicks += r.click as u64;
        books += r.booking as u64;
        if let Some(k) = key.key_of(r) {
            let s = stats.entry(k).or_default();
            s[0] += 1;
            s[1] += r.click as u32;
            s[2] += r.booking as u32;
        }
    }
    let global_ctr = if pres > 0 { clicks as f64 / pres as f64 } else { 0.0 };
    let global_cvr = if clicks > 0 { books as f64 / clicks as f64 } else { 0.0 };
    Ok(CtrCvrTable { key, stats: stats.into_iter().collect(), global_ctr, global_cvr })
}
