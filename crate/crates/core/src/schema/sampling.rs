//! Validation split, query sampling, balancing and per-country split.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use rand::seq::index;
use rand::Rng;

use super::{Dataset, QueryGroup};
use crate::math::seeded_rng;
use crate::{Error, Result};

/// Holds out every query with `srch_id % 10 == 1`.
pub fn split_validation(ds: &Dataset) -> (Dataset, Dataset) {
    let (valid, train): (Vec<QueryGroup>, Vec<QueryGroup>) =
        ds.groups().iter().cloned().partition(|g| g.srch_id() % 10 == 1);
    if valid.is_empty() {
        log::warn!("validation split is empty: no srch_id = 1 (mod 10)");
    }
    if train.is_empty() {
        log::warn!("training split is empty: every srch_id = 1 (mod 10)");
    }
    (
        Dataset::from_groups_unchecked(train, *ds.schema()),
        Dataset::from_groups_unchecked(valid, *ds.schema()),
    )
}

/// Keeps each whole query independently with probability `p`.
pub fn sample_fraction(ds: &Dataset, p: f64, seed: u64) -> Result<Dataset> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Argument(format!("sample fraction must be in (0, 1], got {p}")));
    }
    let mut rng = seeded_rng(seed);
    Ok(ds.filter_groups(|_| rng.random::<f64>() < p))
}

/// One uniformly drawn negative per positive, without replacement inside the
/// query. Queries without positives are dropped; queries that run out of
/// negatives keep all of them. Row order inside a group is preserved.
pub fn balance(ds: &Dataset, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let mut groups = Vec::new();
    for g in ds.groups() {
        let positive: Vec<bool> = g.impressions().iter().map(|r| r.grade().is_positive()).collect();
        let Some(keep) = balanced_keep(&positive, &mut rng) else { continue };
        let rows = g
            .impressions()
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(r, _)| r.clone())
            .collect();
        groups.push(QueryGroup { srch_id: g.srch_id(), impressions: rows });
    }
    Dataset::from_groups_unchecked(groups, *ds.schema())
}

/// Keep-mask for one query under [`balance`]; `None` when it has no positives.
pub(crate) fn balanced_keep(positive: &[bool], rng: &mut impl Rng) -> Option<Vec<bool>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..positive.len()).partition(|&i| positive[i]);
    if pos.is_empty() {
        return None;
    }
    let mut keep = alloc::vec![false; positive.len()];
    for &i in &pos {
        keep[i] = true;
    }
    for j in index::sample(rng, neg.len(), pos.len().min(neg.len())) {
        keep[neg[j]] = true;
    }
    Some(keep)
}

/// One dataset per group country (first impression's prop_country_id).
pub fn split_by_country(ds: &Dataset) -> BTreeMap<u32, Dataset> {
    let mut pieces: BTreeMap<u32, Vec<QueryGroup>> = BTreeMap::new();
    for g in ds.groups() {
        pieces.entry(g.country()).or_default().push(g.clone());
    }
    pieces
        .into_iter()
        .map(|(c, gs)| (c, Dataset::from_groups_unchecked(gs, *ds.schema())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Schema, SearchImpression};
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn group(q: u64, grades: &[u8], country: u32) -> Vec<SearchImpression> {
        grades
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let mut r = SearchImpression::new(q, i as u64 + 1, country);
                r.click = g > 0;
                r.booking = g == 5;
                r
            })
            .collect()
    }

    fn ds_of(ids: &[u64]) -> Dataset {
        let rows = ids.iter().flat_map(|&q| group(q, &[1, 0], 1)).collect();
        Dataset::from_rows(rows, Schema::full(true)).unwrap()
    }

    #[test]
    fn validation_rule_mod_ten() {
        let (train, valid) = split_validation(&ds_of(&[1, 2, 10, 11, 21]));
        assert_eq!(valid.query_ids(), BTreeSet::from([1, 11, 21]));
        assert_eq!(train.query_ids(), BTreeSet::from([2, 10]));
    }

    #[test]
    fn degenerate_validation_splits() {
        let (train, valid) = split_validation(&ds_of(&[2, 3, 4]));
        assert!(valid.is_empty());
        assert_eq!(train.n_groups(), 3);
        let (train, valid) = split_validation(&ds_of(&[1, 11, 31]));
        assert!(train.is_empty());
        assert_eq!(valid.n_groups(), 3);
    }

    #[test]
    fn sample_fraction_bounds_and_identity() {
        let ids: Vec<u64> = (1..=1000).collect();
        let ds = ds_of(&ids);
        assert_eq!(sample_fraction(&ds, 1.0, 3).unwrap(), ds);
        let s = sample_fraction(&ds, 0.1, 7).unwrap();
        assert!((60..=140).contains(&s.n_groups()), "{}", s.n_groups());
        assert_eq!(s, sample_fraction(&ds, 0.1, 7).unwrap());
        assert!(sample_fraction(&ds, 0.0, 1).is_err());
        assert!(sample_fraction(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn balance_cases() {
        let rows: Vec<_> = [
            group(1, &[1, 0, 0, 0, 0, 0, 0, 0, 0, 0], 1),
            group(2, &[0, 0, 0], 1),
            group(3, &[5, 1, 0], 1),
        ]
        .concat();
        let ds = Dataset::from_rows(rows, Schema::full(true)).unwrap();
        let b = balance(&ds, 11);
        assert_eq!(b.n_groups(), 2);
        assert_eq!(b.groups()[0].len(), 2);
        let g3: Vec<u8> = b.groups()[1].grades().map(|g| g.value()).collect();
        assert_eq!(g3, vec![5, 1, 0]);
    }

    #[test]
    fn balance_draws_every_negative_uniformly() {
        // one positive among 4 negatives: over many seeds each negative shows up
        let rows = group(1, &[1, 0, 0, 0, 0], 1);
        let ds = Dataset::from_rows(rows, Schema::full(true)).unwrap();
        let mut hits = [0usize; 5];
        for seed in 0..400 {
            let b = balance(&ds, seed);
            for r in b.groups()[0].impressions() {
                hits[r.prop_id as usize - 1] += 1;
            }
        }
        assert_eq!(hits[0], 400);
        for h in &hits[1..] {
            assert!((60..=140).contains(h), "{hits:?}");
        }
    }

    #[test]
    fn country_split_partitions() {
        let rows = [group(1, &[1, 0], 4), group(2, &[0], 9), group(3, &[1], 4)].concat();
        let ds = Dataset::from_rows(rows, Schema::full(true)).unwrap();
        let pieces = split_by_country(&ds);
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[&4].query_ids(), BTreeSet::from([1, 3]));
        let single = ds.filter_groups(|g| g.country() == 4);
        let pieces = split_by_country(&single);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[&4], single);
    }
}
