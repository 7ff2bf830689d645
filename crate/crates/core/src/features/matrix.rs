use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};

use crate::schema::{Dataset, Grade};
use crate::{Error, Result};

/// Identity of one matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowKey {
    pub srch_id: u64,
    pub prop_id: u64,
    /// Country of the row's query group.
    pub country: u32,
}

/// Dense row-major feature rows with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    data: Vec<f64>,
    keys: Vec<RowKey>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, data: Vec<f64>, keys: Vec<RowKey>) -> Result<Self> {
        if data.len() != columns.len() * keys.len() {
            return Err(Error::Dimension { expected: columns.len() * keys.len(), found: data.len() });
        }
        Ok(FeatureMatrix { columns, data, keys })
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, keys: Vec<RowKey>) -> Result<Self> {
        let n = keys.len();
        let d = columns.len();
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::Schema(alloc::format!(
                    "column {name} has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for (_, col) in &columns {
                data.push(col[i]);
            }
        }
        Ok(FeatureMatrix { columns: columns.into_iter().map(|(n, _)| n).collect(), data, keys })
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.columns.len();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name).ok_or_else(|| Error::UnknownColumn(name.into()))?;
        Ok((0..self.n_rows()).map(|i| self.data[i * self.n_cols() + j]).collect())
    }

    /// Matrix restricted to the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::UnknownColumn((*n).into())))
            .collect::<Result<Vec<_>>>()?;
        let d = self.n_cols();
        let mut data = Vec::with_capacity(self.n_rows() * idx.len());
        for row in self.data.chunks_exact(d.max(1)).take(self.n_rows()) {
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Ok(FeatureMatrix {
            columns: names.iter().map(|s| String::from(*s)).collect(),
            data,
            keys: self.keys.clone(),
        })
    }

    /// Rows restricted to `rows`, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            data,
            keys: rows.iter().map(|&i| self.keys[i]).collect(),
        }
    }

    /// Contiguous row ranges sharing a srch_id.
    pub fn query_ranges(&self) -> Vec<Range<usize>> {
        query_ranges(&self.keys)
    }
}

pub(crate) fn query_ranges(keys: &[RowKey]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=keys.len() {
        if i == keys.len() || keys[i].srch_id != keys[start].srch_id {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Row keys in dataset iteration order.
pub fn dataset_keys(ds: &Dataset) -> Vec<RowKey> {
    ds.groups()
        .iter()
        .flat_map(|g| {
            let country = g.country();
            g.impressions().iter().map(move |r| RowKey { srch_id: r.srch_id, prop_id: r.prop_id, country })
        })
        .collect()
}

/// Grades in dataset iteration order.
pub fn dataset_grades(ds: &Dataset) -> Vec<Grade> {
    ds.rows().map(|r| r.grade()).collect()
}
