//! Central finite-difference checking used throughout the test suite.

use crate::float::Scalar;
use crate::nn::{Graph, NodeId};
use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform(-1, 1) array for tests, deterministic in `seed`.
pub fn rand_array<F: Scalar>(shape: &[usize], seed: u64) -> ArrayD<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(shape.to_vec(), || F::from_f64(rng.gen_range(-1.0..1.0)))
}

/// Central finite differences of a scalar-valued function at `x`.
pub fn finite_diff<F: Scalar>(
    x: &ArrayD<F>,
    eps: f64,
    mut f: impl FnMut(&ArrayD<F>) -> f64,
) -> ArrayD<f64> {
    let mut grad = ArrayD::<f64>::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = xp.as_slice_mut().unwrap()[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + F::from_f64(eps);
        let hi = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig - F::from_f64(eps);
        let lo = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig;
        grad.as_slice_mut().unwrap()[idx] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Largest relative error between two gradients, with an absolute floor so
/// near-zero entries do not blow up the ratio.
pub fn max_rel_err<F: Scalar>(analytic: &ArrayD<F>, numeric: &ArrayD<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let a = a.to_f64_();
        let denom = a.abs().max(n.abs()).max(1e-4);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

/// Build a scalar-output graph from a single input leaf and assert that the
/// backpropagated gradient matches central finite differences (f64, 1e-5).
pub fn check_grad(shape: &[usize], seed: u64, build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId) {
    check_grad_mode(shape, seed, true, build)
}

/// Same as [`check_grad`] with an explicit graph mode (train / eval).
pub fn check_grad_mode(
    shape: &[usize],
    seed: u64,
    train_mode: bool,
    build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId,
) {
    let x0 = rand_array::<f64>(shape, seed);
    let mut g = Graph::new(train_mode);
    let x = g.leaf(x0.clone(), true);
    let loss = build(&mut g, x);
    assert_eq!(g.value(loss).len(), 1, "check_grad needs a scalar output");
    let grads = g.backward(loss);
    let analytic = grads.get(x).expect("no gradient reached the input").clone();

    let numeric = finite_diff(&x0, 1e-5, |xv| {
        let mut g = Graph::new(train_mode);
        let x = g.leaf(xv.clone(), false);
        let loss = build(&mut g, x);
        g.scalar(loss)
    });
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < 1e-5, "gradient mismatch: max rel err {err:.3e}");
}
