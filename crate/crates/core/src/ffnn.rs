//! One-hidden-layer regressor `d → k (tanh | identity) → m`, trained with
//! mini-batch Adam on mean squared error.
//!
//! With the identity activation the network is a rank-k linear map plus
//! bias, i.e. a reduced-rank regression model fitted by gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// One batch holding every sample, in row order; `batch_size` is ignored.
    #[serde(default)]
    pub full_batch: bool,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        50
    }
    pub fn learning_rate() -> f64 {
        1e-4
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-8
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: defaults::epochs(),
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            full_batch: false,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            epsilon: defaults::epsilon(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnnModel {
    /// k × d
    pub(crate) w1: DMatrix<f64>,
    pub(crate) b1: DVector<f64>,
    /// m × k
    pub(crate) w2: DMatrix<f64>,
    pub(crate) b2: DVector<f64>,
    pub(crate) activation: Activation,
    pub(crate) train_log: Vec<f64>,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnGradients {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl FfnnGradients {
    fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    /// Gradient entry in the flattened parameter order of [`FfnnModel::param`].
    pub fn get(&self, idx: usize) -> f64 {
        flat_get(self.slices(), idx)
    }
}

fn flat_get(parts: [&[f64]; 4], mut idx: usize) -> f64 {
    for part in parts {
        if idx < part.len() {
            return part[idx];
        }
        idx -= part.len();
    }
    panic!("parameter index out of range")
}

impl FfnnModel {
    /// Glorot-uniform weights and zero biases.
    pub fn init(d: usize, k: usize, m: usize, activation: Activation, seed: u64) -> Result<Self> {
        if d == 0 || k == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must be positive, got d={d}, k={k}, m={m}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        let w1 = glorot(k, d);
        let w2 = glorot(m, k);
        Ok(FfnnModel {
            w1,
            b1: DVector::zeros(k),
            w2,
            b2: DVector::zeros(m),
            activation,
            train_log: Vec::new(),
        })
    }

    pub(crate) fn from_parts(
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
        activation: Activation,
        train_log: Vec<f64>,
    ) -> Result<Self> {
        let k = w1.nrows();
        if b1.len() != k || w2.ncols() != k || b2.len() != w2.nrows() {
            return Err(Error::DimensionMismatch {
                context: "ffnn parameter shapes".to_string(),
                expected: k,
                found: b1.len(),
            });
        }
        Ok(FfnnModel {
            w1,
            b1,
            w2,
            b2,
            activation,
            train_log,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn train_log(&self) -> &[f64] {
        &self.train_log
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &DVector<f64> {
        &self.b2
    }

    pub fn set_b2(&mut self, b2: DVector<f64>) {
        assert_eq!(b2.len(), self.output_dim());
        self.b2 = b2;
    }

    /// k(d+1) + m(k+1)
    pub fn parameter_count(&self) -> usize {
        let (d, k, m) = (self.input_dim(), self.hidden_dim(), self.output_dim());
        k * (d + 1) + m * (k + 1)
    }

    fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    /// Flattened parameter `idx`: W1 (column-major), b1, W2 (column-major), b2.
    pub fn param(&self, idx: usize) -> f64 {
        flat_get(self.slices(), idx)
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for part in self.slices_mut() {
            if idx < part.len() {
                part[idx] = value;
                return;
            }
            idx -= part.len();
        }
        panic!("parameter index out of range")
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Hidden activations for a dense batch, B × k.
    fn hidden(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x * self.w1.transpose();
        for mut row in h.row_iter_mut() {
            row += self.b1.transpose();
        }
        let act = self.activation;
        h.apply(|z| *z = act.apply(*z));
        h
    }

    fn output(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = h * self.w2.transpose();
        for mut row in p.row_iter_mut() {
            row += self.b2.transpose();
        }
        p
    }

    pub fn predict_dense(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "ffnn predict: input columns".to_string(),
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(self.output(&self.hidden(x)))
    }

    /// `W2·act(W1·x + b1) + b2` for every row.
    pub fn predict(&self, x: &DataMatrix) -> Result<DMatrix<f64>> {
        x.check_cols(self.input_dim(), "ffnn predict: input columns")?;
        match x {
            DataMatrix::Dense(m) => self.predict_dense(m),
            DataMatrix::Sparse(_) => self.predict_dense(&x.to_dense()),
        }
    }

    /// Mean squared error over all B × m cells, and its gradients.
    pub fn loss_and_gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, FfnnGradients) {
        let h = self.hidden(x);
        let p = self.output(&h);
        let diff = p - y;
        let cells = (diff.nrows() * diff.ncols()).max(1) as f64;
        let loss = diff.norm_squared() / cells;
        let g = diff * (2.0 / cells);
        let w2 = g.transpose() * &h;
        let b2 = column_sums(&g);
        let mut dz = &g * &self.w2;
        let act = self.activation;
        dz.zip_apply(&h, |dz, h| *dz *= act.derivative_from_output(h));
        let w1 = dz.transpose() * x;
        let b1 = column_sums(&dz);
        (loss, FfnnGradients { w1, b1, w2, b2 })
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let diff = self.output(&self.hidden(x)) - y;
        diff.norm_squared() / (diff.nrows() * diff.ncols()).max(1) as f64
    }

    /// Returns the model after `cfg.epochs` of Adam; `self` is untouched.
    pub fn train(&self, x: &DataMatrix, y: &DataMatrix, cfg: &TrainConfig) -> Result<FfnnModel> {
        let n = x.nrows();
        x.check_cols(self.input_dim(), "ffnn train: input columns")?;
        y.check_cols(self.output_dim(), "ffnn train: target columns")?;
        if y.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "ffnn train: target rows".to_string(),
                expected: n,
                found: y.nrows(),
            });
        }
        if cfg.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".to_string()));
        }
        let batch = if cfg.full_batch { n } else { cfg.batch_size };
        if batch == 0 || batch > n {
            return Err(Error::InvalidParameter(format!(
                "batch size {batch} must lie in [1, {n}]"
            )));
        }
        if !x.all_finite() || !y.all_finite() {
            return Err(Error::DegenerateInput("non-finite training data".to_string()));
        }

        let mut model = self.clone();
        model.train_log.clear();
        let mut adam = AdamState::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let full = if cfg.full_batch || batch == n {
            Some((x.to_dense(), y.to_dense()))
        } else {
            None
        };
        for epoch in 0..cfg.epochs {
            let mut loss_sum = 0.0;
            if let Some((xf, yf)) = &full {
                let (loss, grads) = model.loss_and_gradients(xf, yf);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                loss_sum = loss * n as f64;
                adam.step(&mut model, &grads, cfg);
            } else {
                order.shuffle(&mut rng);
                for rows in order.chunks(batch) {
                    let xb = x.rows_dense(rows);
                    let yb = y.rows_dense(rows);
                    let (loss, grads) = model.loss_and_gradients(&xb, &yb);
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss { epoch });
                    }
                    loss_sum += loss * rows.len() as f64;
                    adam.step(&mut model, &grads, cfg);
                }
            }
            if !model.all_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            model.train_log.push(loss_sum / n as f64);
        }
        Ok(model)
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl AdamState {
    fn new(model: &FfnnModel) -> Self {
        let shapes: Vec<usize> = model.slices().iter().map(|s| s.len()).collect();
        AdamState {
            first: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            second: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            step: 0,
        }
    }

    fn step(&mut self, model: &mut FfnnModel, grads: &FfnnGradients, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let grads = grads.slices();
        for (((param, grad), m), v) in model
            .slices_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Finite-difference step used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Largest relative disagreement between analytic gradients and central
/// differences over `probe_count` randomly chosen parameters. Intended for
/// shapes up to 20 samples × 10 features.
pub fn gradient_check(
    model: &FfnnModel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    probe_count: usize,
    seed: u64,
) -> Result<f64> {
    if x.nrows() > 20 || x.ncols() > 10 || y.ncols() > 10 {
        return Err(Error::InvalidParameter(format!(
            "gradient check is meant for at most 20 x 10 inputs/targets, got {}x{} / {}",
            x.nrows(),
            x.ncols(),
            y.ncols()
        )));
    }
    let (_, grads) = model.loss_and_gradients(x, y);
    let total = model.parameter_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = index::sample(&mut rng, total, probe_count.min(total));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for idx in probes.iter() {
        let original = model.param(idx);
        probe.set_param(idx, original + GRADIENT_CHECK_STEP);
        let up = probe.loss(x, y);
        probe.set_param(idx, original - GRADIENT_CHECK_STEP);
        let down = probe.loss(x, y);
        probe.set_param(idx, original);
        let numeric = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let analytic = grads.get(idx);
        let scale = analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_data() -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(12, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0 - 0.4);
        let y = DMatrix::from_fn(12, 3, |i, j| ((i + 2 * j) % 5) as f64 / 5.0);
        (x, y)
    }

    #[test]
    fn init_is_seeded() {
        let a = FfnnModel::init(768, 25, 2526, Activation::Tanh, 7).unwrap();
        let b = FfnnModel::init(768, 25, 2526, Activation::Tanh, 7).unwrap();
        assert_eq!(a, b);
        let c = FfnnModel::init(768, 25, 2526, Activation::Tanh, 8).unwrap();
        assert_ne!(a, c);
        assert!(a.b1.iter().all(|v| *v == 0.0) && a.b2.iter().all(|v| *v == 0.0));
        let limit = (6.0f64 / (768.0 + 25.0)).sqrt();
        assert!(a.w1.iter().all(|v| v.abs() < limit));
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(matches!(
            FfnnModel::init(4, 0, 3, Activation::Tanh, 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn parameter_count_formula() {
        for (d, k, m) in [(1, 1, 1), (768, 25, 2526), (5, 3, 8)] {
            let model = FfnnModel::init(d, k, m, Activation::Tanh, 0).unwrap();
            assert_eq!(model.parameter_count(), k * (d + 1) + m * (k + 1));
            let flat: usize = model.slices().iter().map(|s| s.len()).sum();
            assert_eq!(flat, model.parameter_count());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = tiny_data();
        let model = FfnnModel::init(4, 3, 3, Activation::Tanh, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let trained = model.train(&x.clone().into(), &y.clone().into(), &cfg).unwrap();
        assert_eq!(trained.w1, model.w1);
        assert_eq!(trained.w2, model.w2);
        assert_eq!(trained.b1, model.b1);
        assert_eq!(trained.b2, model.b2);
        assert_eq!(trained.train_log.len(), 1);
        assert!(model.train_log.is_empty());
    }

    #[test]
    fn constant_output_from_zero_weights() {
        let mut model = FfnnModel::init(3, 2, 4, Activation::Tanh, 0).unwrap();
        model.w1.fill(0.0);
        model.w2.fill(0.0);
        let c = DVector::from_vec(vec![1.5, -2.0, 0.0, 7.0]);
        model.set_b2(c.clone());
        let x = DMatrix::from_fn(5, 3, |i, j| (i * j) as f64 - 1.0);
        let p = model.predict_dense(&x).unwrap();
        for row in p.row_iter() {
            assert_eq!(row.transpose(), c);
        }
    }

    #[test]
    fn identity_network_is_affine() {
        let model = FfnnModel::init(4, 2, 3, Activation::Identity, 11).unwrap();
        let a = DMatrix::from_row_slice(1, 4, &[0.3, -1.0, 2.0, 0.5]);
        let b = DMatrix::from_row_slice(1, 4, &[-0.7, 0.2, 1.0, 4.0]);
        let alpha = 0.3;
        let mix = &a * alpha + &b * (1.0 - alpha);
        let lhs = model.predict_dense(&mix).unwrap();
        let rhs = model.predict_dense(&a).unwrap() * alpha + model.predict_dense(&b).unwrap() * (1.0 - alpha);
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn gradients_vanish_on_zero_inputs() {
        let model = FfnnModel::init(4, 3, 2, Activation::Tanh, 5).unwrap();
        let x = DMatrix::zeros(6, 4);
        let y = DMatrix::zeros(6, 2);
        let (loss, g) = model.loss_and_gradients(&x, &y);
        assert_eq!(loss, 0.0);
        assert!(g.w1.iter().all(|v| *v == 0.0));
        assert!(g.w2.iter().all(|v| *v == 0.0));
        assert!(g.b2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tanh_and_identity_agree_at_zero_preactivation() {
        let (x, y) = tiny_data();
        let mut tanh = FfnnModel::init(4, 3, 3, Activation::Tanh, 9).unwrap();
        tanh.w1.fill(0.0);
        let mut ident = tanh.clone();
        ident.activation = Activation::Identity;
        let (_, gt) = tanh.loss_and_gradients(&x, &y);
        let (_, gi) = ident.loss_and_gradients(&x, &y);
        assert!((gt.w1 - gi.w1).amax() < 1e-15);
    }

    #[test]
    fn gradient_check_passes_for_both_activations() {
        let (x, y) = tiny_data();
        for act in [Activation::Tanh, Activation::Identity] {
            let model = FfnnModel::init(4, 3, 3, act, 21).unwrap();
            let err = gradient_check(&model, &x, &y, 100, 1).unwrap();
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (x, y) = tiny_data();
        let (xd, yd): (DataMatrix, DataMatrix) = (x.into(), y.into());
        let model = FfnnModel::init(4, 3, 3, Activation::Tanh, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 4,
            seed: 17,
            ..TrainConfig::default()
        };
        let a = model.train(&xd, &yd, &cfg).unwrap();
        let b = model.train(&xd, &yd, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.train_log.iter().all(|l| l.is_finite()));
        assert!(a.train_log.last().unwrap() < &a.train_log[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = tiny_data();
        let y = y * 1e300;
        let model = FfnnModel::init(4, 3, 3, Activation::Identity, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1.0,
            full_batch: true,
            ..TrainConfig::default()
        };
        assert!(matches!(
            model.train(&x.into(), &y.into(), &cfg),
            Err(Error::NonFiniteLoss { epoch: 0 })
        ));
    }
}
