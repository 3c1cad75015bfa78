//! Interaction matrices and the weighted mean-field views they induce.
//!
//! Row `i` of `W` says how much each agent `j` contributes to what agent `i`
//! perceives. Rows must sum to one so that views are distributions; columns
//! must also sum to one for the population average of views to coincide with
//! the plain empirical distribution.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::Simplex;

/// Tolerance on row and column sums accepted at construction.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    n: usize,
    dense: Vec<f64>,
    // nonzero (column, weight) pairs per row
    rows: Vec<Vec<(usize, f64)>>,
}

/// Per-row and per-column deviations from unit sums.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub row_deviations: Vec<f64>,
    pub column_deviations: Vec<f64>,
    /// `(row, column, value)` for every entry below `-tol`.
    pub negative_entries: Vec<(usize, usize, f64)>,
    pub tol: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn max_row_deviation(&self) -> f64 {
        self.row_deviations.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn max_column_deviation(&self) -> f64 {
        self.column_deviations.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Checks a square matrix for double stochasticity.
pub fn validate_doubly_stochastic(w: &[Vec<f64>], tol: f64) -> Result<ValidationReport> {
    let n = w.len();
    if let Some((i, row)) = w.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::invalid(format!(
            "matrix is not square: row {i} has {} entries, expected {n}",
            row.len()
        )));
    }
    let row_deviations: Vec<f64> = w.iter().map(|r| r.iter().sum::<f64>() - 1.0).collect();
    let column_deviations: Vec<f64> = (0..n)
        .map(|j| w.iter().map(|r| r[j]).sum::<f64>() - 1.0)
        .collect();
    let mut negative_entries = Vec::new();
    for (i, r) in w.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v < -tol || !v.is_finite() {
                negative_entries.push((i, j, v));
            }
        }
    }
    let passed = negative_entries.is_empty()
        && row_deviations.iter().all(|d| d.abs() <= tol)
        && column_deviations.iter().all(|d| d.abs() <= tol);
    Ok(ValidationReport {
        row_deviations,
        column_deviations,
        negative_entries,
        tol,
        passed,
    })
}

/// Stopping rule for [`InteractionMatrix::sinkhorn_random`].
#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl InteractionMatrix {
    fn from_dense_unchecked(n: usize, dense: Vec<f64>) -> Self {
        let rows = (0..n)
            .map(|i| {
                dense[i * n..(i + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(j, w)| (j, *w))
                    .collect()
            })
            .collect();
        Self { n, dense, rows }
    }

    /// Builds from nested rows, rejecting anything that is not doubly
    /// stochastic within `tol` or has entries outside `[0, 1]`.
    pub fn from_rows(w: &[Vec<f64>], tol: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("interaction matrix needs at least one agent"));
        }
        let report = validate_doubly_stochastic(w, tol)?;
        if !report.passed {
            return Err(Error::invalid(format!(
                "matrix is not doubly stochastic: max row deviation {:e}, max column deviation {:e}, {} negative entries",
                report.max_row_deviation(),
                report.max_column_deviation(),
                report.negative_entries.len()
            )));
        }
        if w.iter().flatten().any(|v| *v > 1.0 + tol) {
            return Err(Error::invalid("interaction weights must lie in [0, 1]"));
        }
        let n = w.len();
        let dense = w.iter().flatten().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self::from_dense_unchecked(n, dense))
    }

    /// `W(i, j) = 1/n` for all pairs.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform interaction needs n >= 1"));
        }
        Ok(Self::from_dense_unchecked(n, vec![1.0 / n as f64; n * n]))
    }

    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("identity interaction needs n >= 1"));
        }
        let mut dense = vec![0.0; n * n];
        (0..n).for_each(|i| dense[i * n + i] = 1.0);
        Ok(Self::from_dense_unchecked(n, dense))
    }

    /// Circulant with `W(i, j) = 1/k` when `(j - i) mod n` is in `1..=k`.
    pub fn ring_k_neighbor(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 || k > n {
            return Err(Error::invalid(format!(
                "ring neighbourhood requires 1 <= k <= n, got n={n}, k={k}"
            )));
        }
        let w = 1.0 / k as f64;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for off in 1..=k {
                dense[i * n + (i + off) % n] = w;
            }
        }
        Ok(Self::from_dense_unchecked(n, dense))
    }

    /// Symmetric window: offsets `±1..=±k/2`, each weighted `1/k`.
    ///
    /// Needs an even `k` with `k < n` so that the `k` neighbours are distinct.
    pub fn symmetric_ring(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k % 2 == 1 || k >= n {
            return Err(Error::invalid(format!(
                "symmetric ring requires even k with 0 < k < n, got n={n}, k={k}"
            )));
        }
        let w = 1.0 / k as f64;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for off in 1..=k / 2 {
                dense[i * n + (i + off) % n] = w;
                dense[i * n + (i + n - off) % n] = w;
            }
        }
        Ok(Self::from_dense_unchecked(n, dense))
    }

    /// Random positive matrix pushed onto the doubly stochastic set by
    /// alternating row and column normalization. The final pass is always a
    /// column pass, so column sums are exact up to rounding.
    pub fn sinkhorn_random<R: Rng + ?Sized>(
        n: usize,
        rng: &mut R,
        opts: SinkhornOptions,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sinkhorn matrix needs n >= 1"));
        }
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let mut deviation = f64::INFINITY;
        for _ in 0..opts.max_iter {
            for i in 0..n {
                let s: f64 = m[i * n..(i + 1) * n].iter().sum();
                m[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
            }
            for j in 0..n {
                let s: f64 = (0..n).map(|i| m[i * n + j]).sum();
                (0..n).for_each(|i| m[i * n + j] /= s);
            }
            deviation = (0..n)
                .map(|i| (m[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            if deviation < opts.tol {
                return Ok(Self::from_dense_unchecked(n, m));
            }
        }
        Err(Error::invalid(format!(
            "sinkhorn did not converge in {} iterations (row deviation {deviation:e})",
            opts.max_iter
        )))
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.dense[i * self.n + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.dense.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn validate(&self, tol: f64) -> ValidationReport {
        validate_doubly_stochastic(&self.to_rows(), tol).expect("square by construction")
    }

    /// View of the population from agent `agent`:
    /// entry `k` is `sum_j W(agent, j) * [items[j] == k]`.
    pub fn weighted_view(&self, agent: usize, items: &[usize], set_size: usize) -> Result<Simplex> {
        if agent >= self.n {
            return Err(Error::invalid(format!("agent {agent} out of range 0..{}", self.n)));
        }
        if items.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "weighted_view items",
                expected: self.n,
                actual: items.len(),
            });
        }
        if let Some(bad) = items.iter().find(|&&k| k >= set_size) {
            return Err(Error::invalid(format!("item {bad} out of range 0..{set_size}")));
        }
        Simplex::new(self.view_unchecked(agent, items, set_size))
    }

    /// Views of every agent. Inputs must already be range-checked.
    pub(crate) fn all_views(&self, items: &[usize], set_size: usize) -> Vec<Simplex> {
        (0..self.n)
            .map(|i| {
                Simplex::new(self.view_unchecked(i, items, set_size))
                    .expect("rows of a validated interaction matrix sum to one")
            })
            .collect()
    }

    fn view_unchecked(&self, agent: usize, items: &[usize], set_size: usize) -> Vec<f64> {
        let mut v = vec![0.0; set_size];
        for &(j, w) in &self.rows[agent] {
            v[items[j]] += w;
        }
        v
    }

    /// Row-major CSV, one matrix row per line, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        for row in self.dense.chunks(self.n) {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, tol: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad matrix entry {f:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows, tol)
    }
}
