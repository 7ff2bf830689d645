//! Small numeric helpers over `libm` plus a column standardizer.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(exp(-z))
    } else {
        libm::log1p(exp(z))
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n).
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    sqrt(var)
}

/// Linear-interpolation quantile of already sorted data (numpy's default).
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-column mean/std learned on training rows. Columns with zero spread
/// are centred but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[f64], n_cols: usize) -> Self {
        let n_rows = rows.len().checked_div(n_cols).unwrap_or(0);
        let mut means = alloc::vec![0.0; n_cols];
        let mut scales = alloc::vec![1.0; n_cols];
        if n_rows == 0 {
            return Standardizer { means, scales };
        }
        for row in rows.chunks_exact(n_cols) {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n_rows as f64;
        }
        let mut var = alloc::vec![0.0; n_cols];
        for row in rows.chunks_exact(n_cols) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for (scale, s) in scales.iter_mut().zip(var) {
            let sd = sqrt(s / n_rows as f64);
            *scale = if sd > 1e-12 { sd } else { 1.0 };
        }
        Standardizer { means, scales }
    }

    pub fn identity(n_cols: usize) -> Self {
        Standardizer { means: alloc::vec![0.0; n_cols], scales: alloc::vec![1.0; n_cols] }
    }

    pub fn transform_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(row.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s));
    }

    pub fn transform(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.means.len();
        let mut out = Vec::with_capacity(rows.len());
        if d == 0 {
            return out;
        }
        for row in rows.chunks_exact(d) {
            out.extend(row.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s));
        }
        out
    }
}

/// The crate-wide seeded generator.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed (splitmix64 step).
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
