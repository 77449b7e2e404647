mod common;

use common::checks::{gradient_check, gradient_error, reference_loss};
use core_replay::model::init_model;
use ndarray::Array2;

const REL_TOL: f64 = 1e-4;

#[test]
fn six_parameter_model() {
    // 2 -> 2 linear softmax: 4 weights + 2 biases
    let err = gradient_error(&[2, 2], 3, 11);
    assert!(err < REL_TOL, "relative error {err}");
}

#[test]
fn random_small_models() {
    let err = gradient_check(20, 2024);
    assert!(err < REL_TOL, "relative error {err}");
}

#[test]
fn reference_loss_agrees_with_model_loss() {
    let model = init_model(&[3, 4, 2], 5).unwrap();
    let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 / 12.0);
    let labels = [0, 1, 1, 0];
    let (loss, _) = model.loss_and_gradients(x.view(), &labels);
    assert!((loss - reference_loss(&model, &x, &labels)).abs() < 1e-12);
    assert!(loss >= 0.0);
}
