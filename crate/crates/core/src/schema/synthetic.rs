//! Desk-scale synthetic data with a planted click model.
//!
//! Generative story (all draws from one `ChaCha8Rng` seeded with `seed`):
//!
//! * Countries `1..=n_countries`, each with a log price level
//!   `mu_c ~ N(4.6, 0.4²)` and a pool of `max(200, 4 * per_query)` hotels
//!   with ids `c * 100_000 + j`.
//! * Hotel attributes: star rating in 1..=5 (weights 5/15/35/30/15),
//!   review score in half steps 0..=5, `prop_location_score1 ~ U(0, 7)`,
//!   `prop_location_score2 ~ U(0, 1)²`, a price offset
//!   `0.3 * (star - 3) + N(0, 0.3²)` and
//!   `prop_log_historical_price = mu_c + offset + N(0, 0.1²)`.
//! * Queries: country uniform, destination `c * 1000 + U{0..20}`, date in the
//!   first half of 2013, rooms 1..=3, adults 1..=4, children 0..=2, booking
//!   window `U{0..120}`, affinity score `-U(2, 60)`, `random_bool` with
//!   probability 0.3, visitor history (adr, star rating) and a query-level
//!   noise term `N(0, 0.8²)`.
//! * Impressions: `per_query` distinct hotels of the query's country, price
//!   `exp(mu_c + offset + N(0, 0.25²))`, distance `exp(N(5, 1))`, positions
//!   a random permutation.
//! * Utility: within each query the columns price_usd, prop_starrating,
//!   prop_location_score2 and prop_location_score1 are z-scored (population
//!   std) and combined with [`PLANTED_BETA`]. A click happens with
//!   probability `sigmoid(b0 + query_noise + utility)` where `b0` is solved
//!   by bisection so the expected click rate equals
//!   [`TARGET_POSITIVE_RATE`]. A click turns into a booking with
//!   probability `sigmoid(0.4 + 0.8 * utility)`.
//! * Afterwards 5% of `prop_location_score2` values and 5% of each
//!   visitor history column are blanked.

use alloc::vec::Vec;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Column, Dataset, QueryGroup, Schema, SearchImpression};
use crate::math::{exp, population_std, seeded_rng, sigmoid};

/// Utility weights for (price_usd, prop_starrating, prop_location_score2,
/// prop_location_score1), each z-scored within its query.
pub const PLANTED_BETA: [f64; 4] = [-0.9, 0.5, 1.1, 0.4];

/// Share of impressions that are clicked or booked.
pub const TARGET_POSITIVE_RATE: f64 = 0.044;

const MISSING_RATE: f64 = 0.05;
const DATE_ORIGIN: f64 = 1_356_998_400.0; // 2013-01-01T00:00:00Z

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub n_queries: usize,
    pub impressions_per_query: usize,
    pub n_countries: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n_queries: usize, impressions_per_query: usize, n_countries: usize, seed: u64) -> Self {
        SyntheticConfig { n_queries, impressions_per_query, n_countries, seed }
    }

    /// The reference fixture: 2000 queries of 25 impressions over 20 countries, seed 1.
    pub fn standard() -> Self {
        SyntheticConfig::new(2000, 25, 20, 1)
    }
}

struct Hotel {
    prop_id: u64,
    star: f64,
    review: f64,
    score1: f64,
    score2: f64,
    offset: f64,
    log_hist: f64,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite normal parameters")
}

fn round_to(v: f64, step: f64) -> f64 {
    libm::round(v / step) * step
}

fn zscore_in_place(values: &mut [f64]) {
    let m = crate::math::mean(values);
    let sd = population_std(values);
    for v in values.iter_mut() {
        *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 };
    }
}

/// Generates `n_queries` labeled groups with srch_ids `1..=n_queries`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> crate::Result<Dataset> {
    if cfg.n_queries == 0 || cfg.impressions_per_query == 0 || cfg.n_countries == 0 {
        return Err(crate::Error::Argument("synthetic counts must all be >= 1".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let unit = normal(0.0, 1.0);
    let pool = (4 * cfg.impressions_per_query).max(200);

    let levels: Vec<f64> =
        (0..cfg.n_countries).map(|_| normal(4.6, 0.4).sample(&mut rng)).collect();
    let mut hotels: Vec<Vec<Hotel>> = Vec::with_capacity(cfg.n_countries);
    for (c, &mu) in levels.iter().enumerate() {
        let country = c as u64 + 1;
        let list = (0..pool)
            .map(|j| {
                let u: f64 = rng.random();
                let star = match u {
                    u if u < 0.05 => 1.0,
                    u if u < 0.20 => 2.0,
                    u if u < 0.55 => 3.0,
                    u if u < 0.85 => 4.0,
                    _ => 5.0,
                };
                let review = rng.random_range(0..=10u32) as f64 * 0.5;
                let score1 = round_to(rng.random_range(0.0..7.0), 0.01);
                let s2: f64 = rng.random();
                let score2 = round_to(s2 * s2, 0.0001);
                let offset = 0.3 * (star - 3.0) + 0.3 * unit.sample(&mut rng);
                let log_hist = round_to(mu + offset + 0.1 * unit.sample(&mut rng), 0.01);
                Hotel {
                    prop_id: country * 100_000 + j as u64,
                    star,
                    review,
                    score1,
                    score2,
                    offset,
                    log_hist,
                }
            })
            .collect();
        hotels.push(list);
    }

    let mut rows: Vec<SearchImpression> =
        Vec::with_capacity(cfg.n_queries * cfg.impressions_per_query);
    let mut utility: Vec<f64> = Vec::with_capacity(rows.capacity());
    let mut query_noise: Vec<f64> = Vec::with_capacity(cfg.n_queries);

    for q in 0..cfg.n_queries {
        let srch_id = q as u64 + 1;
        let c = rng.random_range(0..cfg.n_countries);
        let mu = levels[c];
        let dest = (c as f64 + 1.0) * 1000.0 + rng.random_range(0..20u32) as f64;
        let date = DATE_ORIGIN + rng.random_range(0..(181 * 86_400u32)) as f64;
        let rooms = 1.0 + (rng.random::<f64>() < 0.1) as u8 as f64 + (rng.random::<f64>() < 0.02) as u8 as f64;
        let adults = rng.random_range(1..=4u32) as f64;
        let children = if rng.random::<f64>() < 0.25 { rng.random_range(1..=2u32) as f64 } else { 0.0 };
        let window = rng.random_range(0..=120u32) as f64;
        let affinity = round_to(-rng.random_range(2.0..60.0), 0.001);
        let random_bool = (rng.random::<f64>() < 0.3) as u8 as f64;
        let adr = round_to(exp(mu + 0.3 * unit.sample(&mut rng)), 0.01);
        let hist_star = rng.random_range(4..=10u32) as f64 * 0.5;
        query_noise.push(0.8 * unit.sample(&mut rng));

        let n = cfg.impressions_per_query;
        let chosen = index::sample(&mut rng, pool, n).into_vec();
        let mut positions: Vec<u32> = (1..=n as u32).collect();
        rand::seq::SliceRandom::shuffle(positions.as_mut_slice(), &mut rng);

        let start = rows.len();
        for (slot, &h) in chosen.iter().enumerate() {
            let hotel = &hotels[c][h];
            let price = round_to(exp(mu + hotel.offset + 0.25 * unit.sample(&mut rng)), 0.01);
            let distance = round_to(exp(normal(5.0, 1.0).sample(&mut rng)), 0.01);
            let mut r = SearchImpression::new(srch_id, hotel.prop_id, c as u32 + 1);
            r.position = positions[slot];
            r.set(Column::PriceUsd, Some(price));
            r.set(Column::PropStarrating, Some(hotel.star));
            r.set(Column::PropReviewScore, Some(hotel.review));
            r.set(Column::PropLocationScore1, Some(hotel.score1));
            r.set(Column::PropLocationScore2, Some(hotel.score2));
            r.set(Column::PropLogHistoricalPrice, Some(hotel.log_hist));
            r.set(Column::VisitorHistAdrUsd, Some(adr));
            r.set(Column::VisitorHistStarrating, Some(hist_star));
            r.set(Column::SrchRoomCount, Some(rooms));
            r.set(Column::SrchAdultsCount, Some(adults));
            r.set(Column::SrchChildrenCount, Some(children));
            r.set(Column::SrchBookingWindow, Some(window));
            r.set(Column::SrchQueryAffinityScore, Some(affinity));
            r.set(Column::OrigDestinationDistance, Some(distance));
            r.set(Column::SrchDestinationId, Some(dest));
            r.set(Column::RandomBool, Some(random_bool));
            r.set(Column::DateTime, Some(date));
            rows.push(r);
        }

        let planted = [
            Column::PriceUsd,
            Column::PropStarrating,
            Column::PropLocationScore2,
            Column::PropLocationScore1,
        ];
        let mut u = alloc::vec![0.0; n];
        for (beta, col) in PLANTED_BETA.iter().zip(planted) {
            let mut z: Vec<f64> = rows[start..].iter().map(|r| r.get(col).unwrap_or(0.0)).collect();
            zscore_in_place(&mut z);
            for (ui, zi) in u.iter_mut().zip(&z) {
                *ui += beta * zi;
            }
        }
        utility.extend(u);
    }

    let per_query = cfg.impressions_per_query;
    let logit = |b0: f64, i: usize| b0 + query_noise[i / per_query] + utility[i];
    let expected_rate =
        |b0: f64| (0..rows.len()).map(|i| sigmoid(logit(b0, i))).sum::<f64>() / rows.len() as f64;
    let (mut lo, mut hi) = (-30.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected_rate(mid) < TARGET_POSITIVE_RATE {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b0 = 0.5 * (lo + hi);

    for i in 0..rows.len() {
        let click = rng.random::<f64>() < sigmoid(logit(b0, i));
        let book = click && rng.random::<f64>() < sigmoid(0.4 + 0.8 * utility[i]);
        rows[i].click = click;
        rows[i].booking = book;
    }

    for chunk in rows.chunks_mut(per_query) {
        for col in [Column::VisitorHistAdrUsd, Column::VisitorHistStarrating] {
            if rng.random::<f64>() < MISSING_RATE {
                for r in chunk.iter_mut() {
                    r.set(col, None);
                }
            }
        }
        for r in chunk.iter_mut() {
            if rng.random::<f64>() < MISSING_RATE {
                r.set(Column::PropLocationScore2, None);
            }
        }
    }

    let groups = rows
        .chunks(per_query)
        .map(|c| QueryGroup { srch_id: c[0].srch_id, impressions: c.to_vec() })
        .collect();
    Ok(Dataset::from_groups_unchecked(groups, Schema::full(true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::split_by_country;

    #[test]
    fn shape_rate_and_determinism() {
        let cfg = SyntheticConfig::new(2000, 25, 20, 1);
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.n_groups(), 2000);
        assert!(ds.groups().iter().all(|g| g.len() == 25));
        let pos = ds.rows().filter(|r| r.grade().is_positive()).count() as f64;
        let rate = pos / ds.n_rows() as f64;
        assert!((0.035..=0.055).contains(&rate), "positive rate {rate}");
        assert!(ds.rows().any(|r| r.booking));
        assert!(ds.rows().all(|r| !r.booking || r.click));
        assert_eq!(ds, generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn missing_values_are_planted() {
        let ds = generate_synthetic(&SyntheticConfig::new(400, 25, 5, 3)).unwrap();
        let n = ds.n_rows() as f64;
        let miss = ds.rows().filter(|r| r.get(Column::PropLocationScore2).is_none()).count() as f64;
        assert!((0.03..0.07).contains(&(miss / n)));
        assert!(ds.rows().any(|r| r.get(Column::VisitorHistAdrUsd).is_none()));
    }

    #[test]
    fn country_constant_within_query_and_172_pieces() {
        let ds = generate_synthetic(&SyntheticConfig::new(3000, 5, 172, 2)).unwrap();
        for g in ds.groups() {
            assert!(g.impressions().iter().all(|r| r.prop_country_id == g.country()));
        }
        assert_eq!(split_by_country(&ds).len(), 172);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_synthetic(&SyntheticConfig::new(0, 5, 1, 1)).is_err());
    }
}
