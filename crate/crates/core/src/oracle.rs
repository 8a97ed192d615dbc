//! Implicit matrices and query accounting.
//!
//! Every estimator in this crate touches matrix data only through
//! [`LinearOperator`]. The checked entry points [`apply`] and [`apply_block`]
//! charge each application to a [`QueryLedger`], so the number of
//! matrix-vector products an algorithm used is always an exact, auditable
//! quantity. Composite operators declare their cost recursively: a power
//! `A^e` costs `e` base queries and a difference `A - B` costs one query on
//! each side.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Result, TraceError};

/// Shared handle to an operator. Operators are immutable once built.
pub type Operator = Arc<dyn LinearOperator>;

/// A square implicit matrix that can only be queried through products.
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Matrix-vector queries charged for one application.
    fn cost(&self) -> u64 {
        1
    }

    /// `out = A x`. Callers guarantee `x.len() == out.len() == dim()`.
    fn matvec(&self, x: &[f64], out: &mut [f64]);

    /// `A X`, one column at a time unless the operator has something faster.
    fn matmat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mut y = out.column_mut(j);
            self.matvec(col.as_slice(), y.as_mut_slice());
        }
        out
    }
}

/// Running count of matrix-vector queries, split by label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryLedger {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, label: &str, queries: u64) {
        if queries == 0 {
            return;
        }
        *self.counts.entry(label.to_owned()).or_insert(0) += queries;
        self.total += queries;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, label: &str) -> u64 {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Folds another ledger (e.g. one owned by a sub-computation) into this one.
    pub fn absorb(&mut self, other: &QueryLedger) {
        for (label, n) in other.counts() {
            self.charge(label, n);
        }
    }

    pub fn reset(&mut self) {
        self.counts.clear();
        self.total = 0;
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(TraceError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Applies `op` to `v`, charging `op.cost()` queries under `label`.
pub fn apply(
    op: &dyn LinearOperator,
    v: &[f64],
    ledger: &mut QueryLedger,
    label: &str,
) -> Result<Vec<f64>> {
    if v.len() != op.dim() {
        return Err(TraceError::DimensionMismatch {
            expected: op.dim(),
            actual: v.len(),
        });
    }
    check_finite(v)?;
    let mut out = vec![0.0; v.len()];
    op.matvec(v, &mut out);
    ledger.charge(label, op.cost());
    Ok(out)
}

/// Applies `op` to every column of `x`, charging `op.cost()` per column.
pub fn apply_block(
    op: &dyn LinearOperator,
    x: &DMatrix<f64>,
    ledger: &mut QueryLedger,
    label: &str,
) -> Result<DMatrix<f64>> {
    if x.nrows() != op.dim() {
        return Err(TraceError::DimensionMismatch {
            expected: op.dim(),
            actual: x.nrows(),
        });
    }
    check_finite(x.as_slice())?;
    let out = op.matmat(x);
    ledger.charge(label, op.cost() * x.ncols() as u64);
    Ok(out)
}

/// `A - B` as an operator.
pub fn difference(left: Operator, right: Operator) -> Result<DifferenceOperator> {
    DifferenceOperator::new(left, right)
}

/// Sum of the diagonal of a dense matrix. Does not touch any ledger; this is
/// ground truth for tests and benchmarks, never used inside estimators.
pub fn exact_trace(op: &DenseSymmetricOperator) -> f64 {
    op.entries.diagonal().sum()
}

/// Exact trace of any operator through the `n` coordinate probes
/// `e_i^T A e_i`. Charges `n * cost` queries.
pub fn probe_trace_exact(
    op: &dyn LinearOperator,
    ledger: &mut QueryLedger,
    label: &str,
) -> Result<f64> {
    const CHUNK: usize = 64;
    let n = op.dim();
    let mut trace = 0.0;
    let mut start = 0;
    while start < n {
        let width = CHUNK.min(n - start);
        let mut basis = DMatrix::zeros(n, width);
        for j in 0..width {
            basis[(start + j, j)] = 1.0;
        }
        let image = apply_block(op, &basis, ledger, label)?;
        for j in 0..width {
            trace += image[(start + j, j)];
        }
        start += width;
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct IdentityOperator {
    dim: usize,
}

impl IdentityOperator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn matmat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.clone()
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl LinearOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &d), &xi) in out.iter_mut().zip(&self.diag).zip(x) {
            *o = d * xi;
        }
    }
}

/// Dense real symmetric matrix stored in full.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymmetricOperator {
    entries: DMatrix<f64>,
}

impl DenseSymmetricOperator {
    /// Symmetrizes `m` as `(M + M^T) / 2`, so the stored entries are exactly
    /// symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(TraceError::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        check_finite(m.as_slice())?;
        let n = m.nrows();
        let mut entries = m;
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (entries[(i, j)] + entries[(j, i)]);
                entries[(i, j)] = avg;
                entries[(j, i)] = avg;
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(TraceError::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            entries: DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }
}

impl LinearOperator for DenseSymmetricOperator {
    fn dim(&self) -> usize {
        self.entries.nrows()
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        // Symmetric, so row i is column i, which is contiguous.
        for (i, o) in out.iter_mut().enumerate() {
            let col = self.entries.column(i);
            *o = col.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn matmat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.entries * x
    }
}

/// Symmetric sparse matrix in compressed-row form (used for graph adjacency).
#[derive(Debug, Clone)]
pub struct SparseSymmetricOperator {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSymmetricOperator {
    /// Builds the 0/1 adjacency matrix of an undirected simple graph.
    pub fn adjacency(dim: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); dim];
        for (u, v) in edges {
            for w in [u, v] {
                if w >= dim {
                    return Err(TraceError::VertexOutOfRange {
                        vertex: w,
                        nodes: dim,
                    });
                }
            }
            if u == v {
                continue;
            }
            rows[u].push(v as u32);
            rows[v].push(u as u32);
        }
        let mut row_start = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        row_start.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_start.push(cols.len());
        }
        let vals = vec![1.0; cols.len()];
        Ok(Self {
            dim,
            row_start,
            cols,
            vals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for idx in self.row_start[i]..self.row_start[i + 1] {
                m[(i, self.cols[idx] as usize)] = self.vals[idx];
            }
        }
        m
    }
}

impl LinearOperator for SparseSymmetricOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let range = self.row_start[i]..self.row_start[i + 1];
            *o = self.cols[range.clone()]
                .iter()
                .zip(&self.vals[range])
                .map(|(&j, &a)| a * x[j as usize])
                .sum();
        }
    }
}

/// `base^exponent`, evaluated by repeated application.
#[derive(Debug, Clone)]
pub struct PowerOperator {
    base: Operator,
    exponent: u32,
}

impl PowerOperator {
    pub fn new(base: Operator, exponent: u32) -> Result<Self> {
        if exponent == 0 {
            return Err(crate::error::invalid("exponent", "must be positive"));
        }
        Ok(Self { base, exponent })
    }

    pub fn base(&self) -> &Operator {
        &self.base
    }
}

impl LinearOperator for PowerOperator {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn cost(&self) -> u64 {
        self.base.cost() * u64::from(self.exponent)
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let mut cur = x.to_vec();
        for _ in 0..self.exponent {
            self.base.matvec(&cur, out);
            cur.copy_from_slice(out);
        }
    }

    fn matmat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut cur = self.base.matmat(x);
        for _ in 1..self.exponent {
            cur = self.base.matmat(&cur);
        }
        cur
    }
}

/// `left - right`; each application queries both sides once.
#[derive(Debug, Clone)]
pub struct DifferenceOperator {
    left: Operator,
    right: Operator,
}

impl DifferenceOperator {
    pub fn new(left: Operator, right: Operator) -> Result<Self> {
        if left.dim() != right.dim() {
            return Err(TraceError::DimensionMismatch {
                expected: left.dim(),
                actual: right.dim(),
            });
        }
        Ok(Self { left, right })
    }
}

impl LinearOperator for DifferenceOperator {
    fn dim(&self) -> usize {
        self.left.dim()
    }

    fn cost(&self) -> u64 {
        self.left.cost() + self.right.cost()
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; x.len()];
        self.left.matvec(x, out);
        self.right.matvec(x, &mut tmp);
        for (o, t) in out.iter_mut().zip(tmp) {
            *o -= t;
        }
    }

    fn matmat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.left.matmat(x) - self.right.matmat(x)
    }
}
