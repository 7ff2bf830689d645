//! Expedia-style search impressions, query groups and datasets.

mod sampling;
mod synthetic;

pub use sampling::{balance, sample_fraction, split_by_country, split_validation};
pub(crate) use sampling::balanced_keep;
pub use synthetic::{generate_synthetic, SyntheticConfig, PLANTED_BETA, TARGET_POSITIVE_RATE};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optional numeric columns carried by every impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    PriceUsd,
    PropStarrating,
    PropReviewScore,
    PropLocationScore1,
    PropLocationScore2,
    PropLogHistoricalPrice,
    VisitorHistAdrUsd,
    VisitorHistStarrating,
    SrchRoomCount,
    SrchAdultsCount,
    SrchChildrenCount,
    SrchBookingWindow,
    SrchQueryAffinityScore,
    OrigDestinationDistance,
    SrchDestinationId,
    RandomBool,
    DateTime,
}

pub const N_COLUMNS: usize = 17;

impl Column {
    pub const ALL: [Column; N_COLUMNS] = [
        Column::PriceUsd,
        Column::PropStarrating,
        Column::PropReviewScore,
        Column::PropLocationScore1,
        Column::PropLocationScore2,
        Column::PropLogHistoricalPrice,
        Column::VisitorHistAdrUsd,
        Column::VisitorHistStarrating,
        Column::SrchRoomCount,
        Column::SrchAdultsCount,
        Column::SrchChildrenCount,
        Column::SrchBookingWindow,
        Column::SrchQueryAffinityScore,
        Column::OrigDestinationDistance,
        Column::SrchDestinationId,
        Column::RandomBool,
        Column::DateTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::PriceUsd => "price_usd",
            Column::PropStarrating => "prop_starrating",
            Column::PropReviewScore => "prop_review_score",
            Column::PropLocationScore1 => "prop_location_score1",
            Column::PropLocationScore2 => "prop_location_score2",
            Column::PropLogHistoricalPrice => "prop_log_historical_price",
            Column::VisitorHistAdrUsd => "visitor_hist_adr_usd",
            Column::VisitorHistStarrating => "visitor_hist_starrating",
            Column::SrchRoomCount => "srch_room_count",
            Column::SrchAdultsCount => "srch_adults_count",
            Column::SrchChildrenCount => "srch_children_count",
            Column::SrchBookingWindow => "srch_booking_window",
            Column::SrchQueryAffinityScore => "srch_query_affinity_score",
            Column::OrigDestinationDistance => "orig_destination_distance",
            Column::SrchDestinationId => "srch_destination_id",
            Column::RandomBool => "random_bool",
            Column::DateTime => "date_time",
        }
    }

    pub fn from_name(name: &str) -> Option<Column> {
        Column::ALL.into_iter().find(|c| c.name() == name)
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Columns describing the visitor or the search rather than the hotel.
    /// They are (nearly) constant within a query.
    pub fn is_visitor_or_query(self) -> bool {
        matches!(
            self,
            Column::VisitorHistAdrUsd
                | Column::VisitorHistStarrating
                | Column::SrchRoomCount
                | Column::SrchAdultsCount
                | Column::SrchChildrenCount
                | Column::SrchBookingWindow
                | Column::SrchQueryAffinityScore
                | Column::SrchDestinationId
                | Column::RandomBool
                | Column::DateTime
        )
    }
}

/// Relevance grade of one impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    Irrelevant = 0,
    Clicked = 1,
    Booked = 5,
}

impl Grade {
    pub const fn value(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self != Grade::Irrelevant
    }

    pub fn from_value(v: u8) -> Option<Grade> {
        match v {
            0 => Some(Grade::Irrelevant),
            1 => Some(Grade::Clicked),
            5 => Some(Grade::Booked),
            _ => None,
        }
    }
}

/// Grade from the two interaction flags: a booking beats a click.
pub fn relevance(imp: &SearchImpression) -> Grade {
    grade_from_flags(imp.click, imp.booking)
}

#[inline]
pub const fn grade_from_flags(click: bool, booking: bool) -> Grade {
    match (click, booking) {
        (_, true) => Grade::Booked,
        (true, false) => Grade::Clicked,
        (false, false) => Grade::Irrelevant,
    }
}

/// One candidate hotel shown for one search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchImpression {
    pub srch_id: u64,
    pub prop_id: u64,
    pub prop_country_id: u32,
    pub position: u32,
    pub raw: [Option<f64>; N_COLUMNS],
    pub click: bool,
    pub booking: bool,
}

impl SearchImpression {
    pub fn new(srch_id: u64, prop_id: u64, prop_country_id: u32) -> Self {
        SearchImpression {
            srch_id,
            prop_id,
            prop_country_id,
            position: 1,
            raw: [None; N_COLUMNS],
            click: false,
            booking: false,
        }
    }

    #[inline]
    pub fn get(&self, col: Column) -> Option<f64> {
        self.raw[col.index()]
    }

    #[inline]
    pub fn set(&mut self, col: Column, value: Option<f64>) {
        self.raw[col.index()] = value;
    }

    pub fn with(mut self, col: Column, value: f64) -> Self {
        self.set(col, Some(value));
        self
    }

    pub fn grade(&self) -> Grade {
        relevance(self)
    }

    /// A booking implies a click. Returns true when the row was changed.
    pub fn repair_flags(&mut self) -> bool {
        if self.booking && !self.click {
            self.click = true;
            true
        } else {
            false
        }
    }

    pub fn check_ranges(&self) -> core::result::Result<(), String> {
        if let Some(p) = self.get(Column::PriceUsd) {
            if !(p >= 0.0) {
                return Err(format!("price_usd must be >= 0, got {p}"));
            }
        }
        if let Some(r) = self.get(Column::SrchRoomCount) {
            if !(r >= 1.0) {
                return Err(format!("srch_room_count must be >= 1, got {r}"));
            }
        }
        for (col, v) in Column::ALL.iter().zip(&self.raw) {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(format!("{} is not finite", col.name()));
                }
            }
        }
        Ok(())
    }
}

/// All impressions of one search, in display/file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    srch_id: u64,
    impressions: Vec<SearchImpression>,
}

impl QueryGroup {
    pub fn new(impressions: Vec<SearchImpression>) -> Result<Self> {
        let first = impressions
            .first()
            .ok_or_else(|| Error::Schema("query group must not be empty".into()))?;
        let srch_id = first.srch_id;
        let mut seen = BTreeSet::new();
        for imp in &impressions {
            if imp.srch_id != srch_id {
                return Err(Error::Schema(format!(
                    "impression with srch_id {} in group {srch_id}",
                    imp.srch_id
                )));
            }
            if !seen.insert(imp.prop_id) {
                return Err(Error::Schema(format!(
                    "prop_id {} appears twice in srch_id {srch_id}",
                    imp.prop_id
                )));
            }
        }
        Ok(QueryGroup { srch_id, impressions })
    }

    pub fn srch_id(&self) -> u64 {
        self.srch_id
    }

    pub fn impressions(&self) -> &[SearchImpression] {
        &self.impressions
    }

    pub fn len(&self) -> usize {
        self.impressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impressions.is_empty()
    }

    /// Country of the whole group: the first impression's prop_country_id.
    pub fn country(&self) -> u32 {
        self.impressions[0].prop_country_id
    }

    pub fn grades(&self) -> impl Iterator<Item = Grade> + '_ {
        self.impressions.iter().map(relevance)
    }
}

/// Which raw columns a dataset carries and whether it has labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub present: [bool; N_COLUMNS],
    pub labeled: bool,
}

impl Schema {
    pub fn full(labeled: bool) -> Self {
        Schema { present: [true; N_COLUMNS], labeled }
    }

    pub fn has(&self, col: Column) -> bool {
        self.present[col.index()]
    }

    pub fn columns(&self) -> impl Iterator<Item = Column> + '_ {
        Column::ALL.into_iter().filter(|c| self.has(*c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    groups: Vec<QueryGroup>,
    schema: Schema,
}

impl Dataset {
    pub fn new(groups: Vec<QueryGroup>, schema: Schema) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for g in &groups {
            if !ids.insert(g.srch_id) {
                return Err(Error::Schema(format!("srch_id {} appears in two groups", g.srch_id)));
            }
        }
        Ok(Dataset { groups, schema })
    }

    pub fn empty(schema: Schema) -> Self {
        Dataset { groups: Vec::new(), schema }
    }

    /// Groups rows by srch_id in order of first appearance, keeping row order
    /// inside each group. Repairs booking-without-click rows.
    pub fn from_rows(rows: Vec<SearchImpression>, schema: Schema) -> Result<Self> {
        let mut index: BTreeMap<u64, usize> = BTreeMap::new();
        let mut buckets: Vec<Vec<SearchImpression>> = Vec::new();
        for mut row in rows {
            row.repair_flags();
            let slot = *index.entry(row.srch_id).or_insert_with(|| {
                buckets.push(Vec::new());
                buckets.len() - 1
            });
            buckets[slot].push(row);
        }
        let groups = buckets.into_iter().map(QueryGroup::new).collect::<Result<Vec<_>>>()?;
        Ok(Dataset { groups, schema })
    }

    pub(crate) fn from_groups_unchecked(groups: Vec<QueryGroup>, schema: Schema) -> Self {
        Dataset { groups, schema }
    }

    pub fn groups(&self) -> &[QueryGroup] {
        &self.groups
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn is_labeled(&self) -> bool {
        self.schema.labeled
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_rows(&self) -> usize {
        self.groups.iter().map(QueryGroup::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &SearchImpression> {
        self.groups.iter().flat_map(|g| g.impressions.iter())
    }

    pub fn query_ids(&self) -> BTreeSet<u64> {
        self.groups.iter().map(|g| g.srch_id).collect()
    }

    /// Keeps whole groups matching `keep`.
    pub fn filter_groups(&self, mut keep: impl FnMut(&QueryGroup) -> bool) -> Dataset {
        Dataset {
            groups: self.groups.iter().filter(|g| keep(g)).cloned().collect(),
            schema: self.schema,
        }
    }

    /// Rows sorted by srch_id, original order inside each group.
    pub fn export_order(&self) -> Vec<&SearchImpression> {
        let mut groups: Vec<&QueryGroup> = self.groups.iter().collect();
        groups.sort_by_key(|g| g.srch_id);
        groups.into_iter().flat_map(|g| g.impressions.iter()).collect()
    }

    /// Same data with click/booking flags replaced; used to check that
    /// label-free stages really ignore labels.
    pub fn map_labels(&self, mut f: impl FnMut(&SearchImpression) -> (bool, bool)) -> Dataset {
        let groups = self
            .groups
            .iter()
            .map(|g| QueryGroup {
                srch_id: g.srch_id,
                impressions: g
                    .impressions
                    .iter()
                    .map(|imp| {
                        let (click, booking) = f(imp);
                        SearchImpression { click, booking, ..imp.clone() }
                    })
                    .collect(),
            })
            .collect();
        Dataset { groups, schema: self.schema }
    }
}
