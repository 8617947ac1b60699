//! Dense/sparse matrix storage shared by the norm, model and evaluation code.
//!
//! Feature norms such as McRae are more than 99% zeros, so a norm matrix is
//! kept in CSR form below [`SPARSE_DENSITY_THRESHOLD`]. The models only need
//! matrix-vector products, column means and row gathers, which both storage
//! kinds provide without densifying.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Matrices with a smaller fraction of nonzero cells are stored as CSR.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum DataMatrix {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix<f64>),
}

impl DataMatrix {
    /// Builds a matrix from `(row, col, value)` entries, choosing sparse
    /// storage when the nonzero density is below the threshold. Zero values
    /// are not stored in the sparse form.
    pub fn from_entries(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut coo = CooMatrix::new(nrows, ncols);
        let mut nnz = 0usize;
        for (i, j, v) in entries {
            if v != 0.0 {
                coo.push(i, j, v);
                nnz += 1;
            }
        }
        let cells = (nrows * ncols).max(1);
        let csr = CsrMatrix::from(&coo);
        if (nnz as f64) / (cells as f64) < SPARSE_DENSITY_THRESHOLD {
            DataMatrix::Sparse(csr)
        } else {
            DataMatrix::Dense(DMatrix::from(&csr))
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            DataMatrix::Dense(m) => m.nrows(),
            DataMatrix::Sparse(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            DataMatrix::Dense(m) => m.ncols(),
            DataMatrix::Sparse(m) => m.ncols(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, DataMatrix::Sparse(_))
    }

    /// Number of cells with a nonzero value.
    pub fn nonzero_count(&self) -> usize {
        match self {
            DataMatrix::Dense(m) => m.iter().filter(|v| **v != 0.0).count(),
            DataMatrix::Sparse(m) => m.values().iter().filter(|v| **v != 0.0).count(),
        }
    }

    pub fn density(&self) -> f64 {
        let cells = self.nrows() * self.ncols();
        if cells == 0 {
            return 0.0;
        }
        self.nonzero_count() as f64 / cells as f64
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            DataMatrix::Dense(m) => m[(i, j)],
            DataMatrix::Sparse(m) => {
                let row = m.row(i);
                match row.col_indices().binary_search(&j) {
                    Ok(pos) => row.values()[pos],
                    Err(_) => 0.0,
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            DataMatrix::Dense(m) => m.iter().all(|v| v.is_finite()),
            DataMatrix::Sparse(m) => m.values().iter().all(|v| v.is_finite()),
        }
    }

    pub fn column_means(&self) -> DVector<f64> {
        let n = self.nrows().max(1) as f64;
        match self {
            DataMatrix::Dense(m) => DVector::from_iterator(
                m.ncols(),
                m.column_iter().map(|c| c.sum() / n),
            ),
            DataMatrix::Sparse(m) => {
                let mut sums = DVector::zeros(m.ncols());
                for (&j, &v) in m.col_indices().iter().zip(m.values()) {
                    sums[j] += v;
                }
                sums / n
            }
        }
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        match self {
            DataMatrix::Dense(m) => m.norm_squared(),
            DataMatrix::Sparse(m) => m.values().iter().map(|v| v * v).sum(),
        }
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            DataMatrix::Dense(m) => m * v,
            DataMatrix::Sparse(m) => DVector::from_iterator(
                m.nrows(),
                m.row_iter().map(|row| {
                    row.col_indices()
                        .iter()
                        .zip(row.values())
                        .map(|(&j, &x)| x * v[j])
                        .sum::<f64>()
                }),
            ),
        }
    }

    /// `selfᵀ * u`.
    pub fn tr_mul_vec(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            DataMatrix::Dense(m) => m.tr_mul(u),
            DataMatrix::Sparse(m) => {
                let mut out = DVector::zeros(m.ncols());
                for (i, row) in m.row_iter().enumerate() {
                    let ui = u[i];
                    if ui == 0.0 {
                        continue;
                    }
                    for (&j, &x) in row.col_indices().iter().zip(row.values()) {
                        out[j] += x * ui;
                    }
                }
                out
            }
        }
    }

    /// `self * b` as a dense matrix.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            DataMatrix::Dense(m) => m * b,
            DataMatrix::Sparse(m) => {
                let mut out = DMatrix::zeros(m.nrows(), b.ncols());
                for (i, row) in m.row_iter().enumerate() {
                    for (&j, &x) in row.col_indices().iter().zip(row.values()) {
                        for c in 0..b.ncols() {
                            out[(i, c)] += x * b[(j, c)];
                        }
                    }
                }
                out
            }
        }
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        match self {
            DataMatrix::Dense(m) => m.column(j).into_owned(),
            DataMatrix::Sparse(_) => {
                DVector::from_iterator(self.nrows(), (0..self.nrows()).map(|i| self.get(i, j)))
            }
        }
    }

    /// Row `i` as a dense vector.
    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        match self {
            DataMatrix::Dense(m) => m.row(i).iter().copied().collect(),
            DataMatrix::Sparse(m) => {
                let mut out = vec![0.0; m.ncols()];
                let row = m.row(i);
                for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                    out[j] = v;
                }
                out
            }
        }
    }

    /// Column indices of the nonzero entries of row `i`, ascending.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        match self {
            DataMatrix::Dense(m) => (0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).collect(),
            DataMatrix::Sparse(m) => {
                let row = m.row(i);
                row.col_indices()
                    .iter()
                    .zip(row.values())
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, _)| *j)
                    .collect()
            }
        }
    }

    /// Gathers the given rows, keeping the storage kind.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        match self {
            DataMatrix::Dense(m) => DataMatrix::Dense(m.select_rows(rows)),
            DataMatrix::Sparse(m) => {
                let mut offsets = Vec::with_capacity(rows.len() + 1);
                let mut indices = Vec::new();
                let mut values = Vec::new();
                offsets.push(0);
                for &i in rows {
                    let row = m.row(i);
                    indices.extend_from_slice(row.col_indices());
                    values.extend_from_slice(row.values());
                    offsets.push(indices.len());
                }
                let csr =
                    CsrMatrix::try_from_csr_data(rows.len(), m.ncols(), offsets, indices, values)
                        .expect("row gather preserves CSR validity");
                DataMatrix::Sparse(csr)
            }
        }
    }

    /// Dense copy of the given rows.
    pub fn rows_dense(&self, rows: &[usize]) -> DMatrix<f64> {
        match self {
            DataMatrix::Dense(m) => m.select_rows(rows),
            DataMatrix::Sparse(m) => {
                let mut out = DMatrix::zeros(rows.len(), m.ncols());
                for (r, &i) in rows.iter().enumerate() {
                    let row = m.row(i);
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        out[(r, j)] = v;
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            DataMatrix::Dense(m) => m.clone(),
            DataMatrix::Sparse(m) => DMatrix::from(m),
        }
    }

    /// Calls `f(row, col, value)` for every stored nonzero, row-major.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            DataMatrix::Dense(m) => {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let v = m[(i, j)];
                        if v != 0.0 {
                            f(i, j, v);
                        }
                    }
                }
            }
            DataMatrix::Sparse(m) => {
                for (i, row) in m.row_iter().enumerate() {
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        if v != 0.0 {
                            f(i, j, v);
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn check_cols(&self, expected: usize, context: &str) -> Result<()> {
        if self.ncols() != expected {
            return Err(Error::DimensionMismatch {
                context: context.to_string(),
                expected,
                found: self.ncols(),
            });
        }
        Ok(())
    }
}

impl From<DMatrix<f64>> for DataMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        DataMatrix::Dense(m)
    }
}
