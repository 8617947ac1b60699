//! PLS2 regression fitted with NIPALS.
//!
//! Columns are mean-centred but not variance-scaled. Deflation is applied
//! implicitly: the residual after `a` components is represented as
//! `X − 1·x̄ᵀ − Σ tᵢpᵢᵀ` and only ever touched through matrix-vector
//! products, so a sparse norm matrix used as input stays sparse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlsrConfig {
    pub k: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-6
}

impl PlsrConfig {
    pub fn new(k: usize) -> Self {
        PlsrConfig {
            k,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlsrModel {
    pub(crate) x_weights: DMatrix<f64>,
    pub(crate) x_loadings: DMatrix<f64>,
    pub(crate) y_loadings: DMatrix<f64>,
    pub(crate) x_rotations: DMatrix<f64>,
    pub(crate) x_mean: DVector<f64>,
    pub(crate) y_mean: DVector<f64>,
    pub(crate) iterations_used: Vec<usize>,
}

/// Residual of a centred matrix after removing `Σ tᵢ lᵢᵀ`.
struct Residual<'a> {
    raw: &'a DataMatrix,
    mean: DVector<f64>,
    loadings: Vec<DVector<f64>>,
}

impl Residual<'_> {
    fn mul(&self, v: &DVector<f64>, scores: &[DVector<f64>]) -> DVector<f64> {
        let mut out = self.raw.mul_vec(v);
        out.add_scalar_mut(-self.mean.dot(v));
        for (t, l) in scores.iter().zip(&self.loadings) {
            out.axpy(-l.dot(v), t, 1.0);
        }
        out
    }

    fn tr_mul(&self, u: &DVector<f64>, scores: &[DVector<f64>]) -> DVector<f64> {
        let mut out = self.raw.tr_mul_vec(u);
        out.axpy(-u.sum(), &self.mean, 1.0);
        for (t, l) in scores.iter().zip(&self.loadings) {
            out.axpy(-t.dot(u), l, 1.0);
        }
        out
    }

    fn column(&self, j: usize, scores: &[DVector<f64>]) -> DVector<f64> {
        let mut out = self.raw.column(j);
        out.add_scalar_mut(-self.mean[j]);
        for (t, l) in scores.iter().zip(&self.loadings) {
            out.axpy(-l[j], t, 1.0);
        }
        out
    }
}

/// Residual energy, relative to the centred total, below which a matrix is
/// treated as fully explained.
const EXHAUSTED: f64 = 1e-10;

/// Fits up to `config.k` components. Fitting stops early, with a warning,
/// once either residual is numerically exhausted; `PlsrModel::k` reports
/// how many components were kept.
pub fn fit_plsr(x: &DataMatrix, y: &DataMatrix, config: &PlsrConfig) -> Result<PlsrModel> {
    let n = x.nrows();
    let d = x.ncols();
    let m = y.ncols();
    let k = config.k;
    if y.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "plsr fit: target rows".to_string(),
            expected: n,
            found: y.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 samples, got {n}")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".to_string()));
    }
    if k > n.min(d) {
        return Err(Error::KTooLarge { k, max: n.min(d) });
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".to_string()));
    }
    if !x.all_finite() || !y.all_finite() {
        return Err(Error::DegenerateInput("non-finite input values".to_string()));
    }

    let x_mean = x.column_means();
    let y_mean = y.column_means();
    let centred_sq = x.frobenius_sq() - n as f64 * x_mean.norm_squared();
    if centred_sq <= 1e-12 * x.frobenius_sq().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateInput("X has zero variance after centering".to_string()));
    }

    let eps = f64::EPSILON;
    let mut xr = Residual {
        raw: x,
        mean: x_mean.clone(),
        loadings: Vec::with_capacity(k),
    };
    let mut yr = Residual {
        raw: y,
        mean: y_mean.clone(),
        loadings: Vec::with_capacity(k),
    };
    let mut scores: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut weights: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut iterations_used = Vec::with_capacity(k);

    let x_energy = centred_sq;
    let y_energy = y.frobenius_sq() - n as f64 * y_mean.norm_squared();
    let mut x_left = x_energy;
    let mut y_left = y_energy;

    for component in 0..k {
        if component > 0 && (x_left <= EXHAUSTED * x_energy || y_left <= EXHAUSTED * y_energy) {
            log::warn!("plsr: residual exhausted after {component} of {k} components, stopping early");
            break;
        }
        let mut y_score = (0..m)
            .map(|j| yr.column(j, &scores))
            .find(|c| c.iter().any(|v| v.abs() > eps))
            .ok_or_else(|| {
                Error::DegenerateInput(format!("Y residual is constant at component {component}"))
            })?;

        let mut w = DVector::zeros(d);
        let mut w_old: Option<DVector<f64>> = None;
        let mut c = DVector::zeros(m);
        let mut iters = 0;
        for i in 0..config.max_iter {
            iters = i + 1;
            w = xr.tr_mul(&y_score, &scores) / y_score.norm_squared();
            let norm = w.norm();
            w /= norm + eps;
            let t = xr.mul(&w, &scores);
            c = yr.tr_mul(&t, &scores) / t.norm_squared();
            y_score = yr.mul(&c, &scores) / (c.norm_squared() + eps);
            let converged = match &w_old {
                Some(old) => (&w - old).norm_squared() < config.tol,
                None => false,
            };
            if converged || m == 1 {
                break;
            }
            w_old = Some(w.clone());
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "weights diverged at component {component}"
            )));
        }

        // Sign convention: largest-magnitude weight entry is positive.
        let biggest = w.iamax();
        if w[biggest] < 0.0 {
            w.neg_mut();
            c.neg_mut();
        }

        let t = xr.mul(&w, &scores);
        let tt = t.norm_squared();
        if tt <= eps {
            return Err(Error::DegenerateInput(format!(
                "X residual is exhausted at component {component}"
            )));
        }
        let p = xr.tr_mul(&t, &scores) / tt;
        let q = yr.tr_mul(&t, &scores) / tt;
        x_left -= p.norm_squared() * tt;
        y_left -= q.norm_squared() * tt;
        xr.loadings.push(p);
        yr.loadings.push(q);
        scores.push(t);
        weights.push(w);
        iterations_used.push(iters);
    }

    let x_weights = DMatrix::from_columns(&weights);
    let x_loadings = DMatrix::from_columns(&xr.loadings);
    let y_loadings = DMatrix::from_columns(&yr.loadings);
    let x_rotations = rotations(&x_weights, &x_loadings)?;
    Ok(PlsrModel {
        x_weights,
        x_loadings,
        y_loadings,
        x_rotations,
        x_mean,
        y_mean,
        iterations_used,
    })
}

/// `W (PᵀW)⁺`: maps centred inputs straight to latent scores.
fn rotations(x_weights: &DMatrix<f64>, x_loadings: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pw = x_loadings.tr_mul(x_weights);
    let pinv = pw
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::DegenerateInput(format!("latent rotation: {e}")))?;
    Ok(x_weights * pinv)
}

impl PlsrModel {
    pub(crate) fn from_parts(
        x_weights: DMatrix<f64>,
        x_loadings: DMatrix<f64>,
        y_loadings: DMatrix<f64>,
        x_mean: DVector<f64>,
        y_mean: DVector<f64>,
        iterations_used: Vec<usize>,
    ) -> Result<Self> {
        let k = x_weights.ncols();
        let d = x_mean.len();
        let m = y_mean.len();
        let shapes = [
            (x_weights.shape(), (d, k), "x_weights"),
            (x_loadings.shape(), (d, k), "x_loadings"),
            (y_loadings.shape(), (m, k), "y_loadings"),
        ];
        for (found, expected, name) in shapes {
            if found != expected {
                return Err(Error::DimensionMismatch {
                    context: format!("plsr {name} rows x cols"),
                    expected: expected.0 * expected.1,
                    found: found.0 * found.1,
                });
            }
        }
        let x_rotations = rotations(&x_weights, &x_loadings)?;
        Ok(PlsrModel {
            x_weights,
            x_loadings,
            y_loadings,
            x_rotations,
            x_mean,
            y_mean,
            iterations_used,
        })
    }

    pub fn k(&self) -> usize {
        self.x_weights.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.y_mean.len()
    }

    /// d × k
    pub fn x_weights(&self) -> &DMatrix<f64> {
        &self.x_weights
    }

    /// d × k
    pub fn x_loadings(&self) -> &DMatrix<f64> {
        &self.x_loadings
    }

    /// m × k
    pub fn y_loadings(&self) -> &DMatrix<f64> {
        &self.y_loadings
    }

    /// d × k
    pub fn x_rotations(&self) -> &DMatrix<f64> {
        &self.x_rotations
    }

    pub fn x_mean(&self) -> &DVector<f64> {
        &self.x_mean
    }

    pub fn y_mean(&self) -> &DVector<f64> {
        &self.y_mean
    }

    /// NIPALS iterations spent on each component.
    pub fn iterations_used(&self) -> &[usize] {
        &self.iterations_used
    }

    /// The d × m regression matrix. Kept factored internally since d × m can
    /// be large for the wide categorical norms.
    pub fn coef(&self) -> DMatrix<f64> {
        &self.x_rotations * self.y_loadings.transpose()
    }

    /// Latent scores `(X − x̄) R`, q × k.
    pub fn transform(&self, x_new: &DataMatrix) -> Result<DMatrix<f64>> {
        x_new.check_cols(self.input_dim(), "plsr predict: input columns")?;
        let mut scores = x_new.mul_dense(&self.x_rotations);
        let offset = self.x_rotations.tr_mul(&self.x_mean);
        for mut row in scores.row_iter_mut() {
            row -= offset.transpose();
        }
        Ok(scores)
    }

    /// `(X − x̄)·coef + ȳ`, q × m.
    pub fn predict(&self, x_new: &DataMatrix) -> Result<DMatrix<f64>> {
        let scores = self.transform(x_new)?;
        let mut out = scores * self.y_loadings.transpose();
        for mut row in out.row_iter_mut() {
            row += self.y_mean.transpose();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize, v: &[f64]) -> DataMatrix {
        DataMatrix::Dense(DMatrix::from_row_slice(rows, cols, v))
    }

    #[test]
    fn rejects_bad_k() {
        let x = dense(3, 2, &[1., 2., 3., 1., 4., 5.]);
        assert!(matches!(
            fit_plsr(&x, &x, &PlsrConfig::new(3)),
            Err(Error::KTooLarge { k: 3, max: 2 })
        ));
        assert!(matches!(
            fit_plsr(&x, &x, &PlsrConfig::new(0)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn constant_input_is_degenerate() {
        let x = dense(3, 2, &[1., 2., 1., 2., 1., 2.]);
        let y = dense(3, 1, &[1., 2., 3.]);
        assert!(matches!(
            fit_plsr(&x, &y, &PlsrConfig::new(1)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn mean_row_predicts_mean_target() {
        let x = dense(4, 3, &[1., 0., 2., 0., 1., 1., 3., 2., 0., 1., 1., 1.]);
        let y = dense(4, 2, &[1., 0., 0., 2., 3., 1., 2., 2.]);
        let model = fit_plsr(&x, &y, &PlsrConfig::new(2)).unwrap();
        let mean_row = DataMatrix::Dense(DMatrix::from_row_slice(1, 3, model.x_mean().as_slice()));
        let pred = model.predict(&mean_row).unwrap();
        for j in 0..2 {
            assert!((pred[(0, j)] - model.y_mean()[j]).abs() < 1e-12);
        }
        assert_eq!(model.coef().shape(), (3, 2));
    }

    #[test]
    fn predict_checks_width() {
        let x = dense(3, 2, &[1., 2., 3., 1., 4., 5.]);
        let model = fit_plsr(&x, &x, &PlsrConfig::new(1)).unwrap();
        assert!(matches!(
            model.predict(&dense(1, 3, &[1., 2., 3.])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stops_when_rank_is_exhausted() {
        // rank-2 centred matrix, asked for 4 components
        let x = DMatrix::from_fn(8, 5, |i, j| {
            let (a, b) = (i as f64, (i * i % 5) as f64);
            a * (j as f64 + 1.0) - b * (j % 2) as f64
        });
        let data = DataMatrix::Dense(x.clone());
        let model = fit_plsr(&data, &data, &PlsrConfig::new(4)).unwrap();
        assert_eq!(model.k(), 2);
        let pred = model.predict(&data).unwrap();
        assert!((pred - x).amax() < 1e-9);
    }
}
