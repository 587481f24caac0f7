//! Small sparse containers used to assemble optimization problems.

use std::collections::BTreeMap;

/// Row-major sparse matrix stored as a list of sorted rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, rows: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// Appends a row; duplicate columns are summed and exact zeros dropped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (c, v) in entries {
            debug_assert!(c < self.ncols, "column {c} out of range {}", self.ncols);
            *merged.entry(c).or_insert(0.0) += v;
        }
        self.rows
            .push(merged.into_iter().filter(|&(_, v)| v != 0.0).collect());
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(c, v)| v * x[c]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.row_dot(i, x)).collect()
    }

    /// Computes `Aᵀ y`.
    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi != 0.0 {
                for &(c, v) in row {
                    out[c] += v * yi;
                }
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Symmetric sparse matrix holding the upper triangle (`i <= j`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymMatrix {
    pub n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SymMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, entries: BTreeMap::new() }
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)` (once on the diagonal).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.entries.entry(key).or_insert(0.0) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    /// Upper-triangle entries `(i, j, v)` with `i <= j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries
            .iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.iter() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.iter()
            .map(|(i, j, v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.entries.values_mut() {
            *v *= s;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.iter().next().is_none()
    }
}
