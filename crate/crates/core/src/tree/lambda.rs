//! Pairwise lambda gradients for one query.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, log2};
use crate::metrics::{discount, GainMode};
use crate::schema::Grade;

pub const LAMBDA_SIGMA: f64 = 1.0;

/// Lambdas and hessians for one query's documents.
///
/// For every pair with `grade_i > grade_j`, `rho = 1 / (1 + exp(sigma (s_i - s_j)))`
/// and `delta` is the NDCG@k change from swapping the two documents in the
/// current ranking (score descending, ties by input position). `lambda_i`
/// gains `sigma * rho * delta`, `lambda_j` loses the same amount, and both
/// hessians gain `sigma^2 * rho * (1 - rho) * delta`.
///
/// Pair contributions are rounded to a power-of-two grid fine enough that all
/// partial sums are exact, which makes the lambdas of a query sum to exactly 0.
pub fn lambda_gradients(scores: &[f64], grades: &[Grade], k: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = scores.len();
    debug_assert_eq!(n, grades.len());
    let mut lambda = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let gains: Vec<f64> = grades.iter().map(|&g| GainMode::Exponential.gain(g)).collect();
    let ideal = crate::metrics::ideal_dcg_at_k(grades, k, GainMode::Exponential);
    if n < 2 || ideal == 0.0 {
        return (lambda, hess);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut disc = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos < k {
            disc[i] = discount(pos + 1);
        }
    }
    let n_pairs = grades
        .iter()
        .enumerate()
        .map(|(i, gi)| grades[i + 1..].iter().filter(|gj| *gj != gi).count())
        .sum::<usize>();
    if n_pairs == 0 {
        return (lambda, hess);
    }
    let grid = exact_grid(2.0 * sigma * n_pairs as f64);
    for i in 0..n {
        for j in 0..n {
            if grades[i] <= grades[j] {
                continue;
            }
            let delta = ((gains[i] - gains[j]) * (disc[i] - disc[j])).abs() / ideal;
            if delta == 0.0 {
                continue;
            }
            let rho = 1.0 / (1.0 + exp(sigma * (scores[i] - scores[j])));
            let c = libm::round(sigma * rho * delta / grid) * grid;
            lambda[i] += c;
            lambda[j] -= c;
            let h = sigma * sigma * rho * (1.0 - rho) * delta;
            hess[i] += h;
            hess[j] += h;
        }
    }
    (lambda, hess)
}

/// Smallest power of two `q` such that every multiple of `q` up to `bound`
/// in magnitude is representable with one bit to spare.
fn exact_grid(bound: f64) -> f64 {
    let e = libm::ceil(log2(bound)) as i32 + 1;
    libm::ldexp(1.0, e - 52)
}
