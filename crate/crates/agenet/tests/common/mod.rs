//! Shared numerical oracles for integration tests: central finite
//! differences and tensor helpers.

use agenet::rng::Rng;
use agenet::tensor::{Shape, Tensor};

/// Central-difference step. With f64 this puts truncation and rounding error
/// both far below the acceptance tolerance for O(1) values.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a floor so near-zero pairs compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Numerical gradient of `loss` at `base` by central differences.
pub fn fd_gradient(base: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = base.to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss(&x);
        x[i] = orig - FD_STEP;
        let down = loss(&x);
        x[i] = orig;
        grad[i] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Asserts every coordinate of the analytic gradient agrees with the
/// numerical one within the suite tolerance.
pub fn assert_gradients_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length mismatch");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let err = relative_error(a, n);
        assert!(
            err <= FD_TOLERANCE,
            "{what}: coordinate {i}: analytic {a} vs numeric {n} (relative error {err:.3e})"
        );
    }
}

pub fn shape(dims: &[usize]) -> Shape {
    Shape::new(dims.to_vec()).expect("test shapes are well-formed")
}

pub fn random_tensor(dims: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(shape(dims), data).expect("length matches dims")
}

/// Scalar loss with an arbitrary upstream gradient: L(y) = sum(w * y).
/// Its gradient with respect to y is exactly w.
pub fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    assert_eq!(y.dims(), w.dims(), "weight tensor must match the output");
    y.data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum()
}
