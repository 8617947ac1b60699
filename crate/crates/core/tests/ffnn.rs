mod common;

use common::{rrr_optimum_mse, Lcg};
use nalgebra::DMatrix;
use normprobe::ffnn::{gradient_check, Activation, FfnnModel, TrainConfig};
use normprobe::matrix::DataMatrix;

/// 30×8 inputs mapped through a full-rank 8×4 matrix plus noise.
fn rrr_fixture() -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = Lcg(11);
    let x = rng.matrix(30, 8);
    let b = rng.matrix(8, 4);
    let noise = rng.matrix(30, 4) * 0.1;
    let y = &x * b + noise;
    (x, y)
}

fn identity_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, epochs: usize) -> FfnnModel {
    let cfg = TrainConfig {
        epochs,
        learning_rate: 1e-2,
        full_batch: true,
        ..TrainConfig::default()
    };
    FfnnModel::init(x.ncols(), k, y.ncols(), Activation::Identity, 3)
        .unwrap()
        .train(&DataMatrix::Dense(x.clone()), &DataMatrix::Dense(y.clone()), &cfg)
        .unwrap()
}

#[test]
fn identity_network_reaches_reduced_rank_optimum() {
    let (x, y) = rrr_fixture();
    for k in [1, 2, 3] {
        let optimum = rrr_optimum_mse(&x, &y, k);
        let model = identity_fit(&x, &y, k, 8000);
        let trained = model.loss(&x, &y);
        assert!(
            (trained - optimum).abs() / optimum < 0.02,
            "k={k}: trained {trained} vs optimum {optimum}"
        );
    }
}

#[test]
fn reduced_rank_oracle_orders_by_rank() {
    let (x, y) = rrr_fixture();
    let losses: Vec<f64> = (1..=4).map(|k| rrr_optimum_mse(&x, &y, k)).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn identity_training_logs_every_epoch_and_converges() {
    let (x, y) = rrr_fixture();
    let model = identity_fit(&x, &y, 2, 3000);
    let log = model.train_log();
    assert_eq!(log.len(), 3000);
    assert!(log.iter().all(|l| l.is_finite()));
    let best = log.iter().cloned().fold(f64::MAX, f64::min);
    assert!(log[log.len() - 1] <= best * 1.01);
    assert!(log[log.len() - 1] < rrr_optimum_mse(&x, &y, 2) * 1.05);
}

#[test]
fn gradient_check_holds_on_seeded_models() {
    let mut rng = Lcg(5);
    let x = rng.matrix(20, 10);
    let y = rng.matrix(20, 6);
    for activation in [Activation::Tanh, Activation::Identity] {
        for seed in 0..3 {
            let model = FfnnModel::init(10, 7, 6, activation, seed).unwrap();
            assert!(model.parameter_count() >= 100);
            let worst = gradient_check(&model, &x, &y, 150, seed).unwrap();
            assert!(worst < 1e-4, "{activation:?} seed {seed}: {worst}");
        }
    }
}

#[test]
fn gradient_check_rejects_large_shapes() {
    let model = FfnnModel::init(11, 2, 2, Activation::Tanh, 0).unwrap();
    let x = DMatrix::zeros(4, 11);
    let y = DMatrix::zeros(4, 2);
    assert!(gradient_check(&model, &x, &y, 10, 0).is_err());
}

#[test]
fn tanh_training_is_finite_and_seeded() {
    let (x, y) = rrr_fixture();
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 1e-3,
        batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let fit = || {
        FfnnModel::init(8, 5, 4, Activation::Tanh, 9)
            .unwrap()
            .train(&DataMatrix::Dense(x.clone()), &DataMatrix::Dense(y.clone()), &cfg)
            .unwrap()
    };
    let (a, b) = (fit(), fit());
    assert_eq!(a, b);
    assert!(a.train_log().iter().all(|l| l.is_finite()));
}
