//! Momentum mirror of the encoder + projection head.
//!
//! The mirror is a structural clone of the online parameter store, updated
//! only by exponential moving average (never by gradients):
//! theta_k <- m * theta_k + (1 - m) * theta_q, applied to every entry
//! including batch-norm running statistics.

use crate::float::Scalar;
use crate::nn::ParamStore;

#[derive(Debug, Clone)]
pub struct MomentumPair<F> {
    /// online parameters (encoder + projection head + decoder)
    pub online: ParamStore<F>,
    /// momentum parameters; same names and shapes as `online`
    pub momentum: ParamStore<F>,
    pub m: F,
}

impl<F: Scalar> MomentumPair<F> {
    /// Initialize the mirror equal to the online store (f2.params = f1.params).
    pub fn new(online: ParamStore<F>, m: F) -> Self {
        let momentum = online.clone();
        MomentumPair { online, momentum, m }
    }

    /// One EMA step. The mirror is a fixed point when it equals the online
    /// store bit-for-bit.
    pub fn update(&mut self) {
        self.momentum.ema_update_from(&self.online, self.m);
    }

    pub fn shapes_match(&self) -> bool {
        self.online.same_shapes(&self.momentum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use ndarray::ArrayD;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("enc.w", ArrayD::from_elem(vec![2, 3], v), ParamKind::Weight);
        s.insert("enc.bn.gamma", ArrayD::from_elem(vec![3], v), ParamKind::BiasOrNorm);
        s.insert("enc.bn.running_mean", ArrayD::from_elem(vec![3], v), ParamKind::Buffer);
        s
    }

    #[test]
    fn equal_stores_are_a_fixed_point() {
        let mut pair = MomentumPair::new(store(0.5), 0.999);
        let before = pair.momentum.clone();
        pair.update();
        for (a, b) in before.iter().zip(pair.momentum.iter()) {
            assert_eq!(a.value, b.value, "fixed point violated for {}", a.name);
        }
    }

    #[test]
    fn single_step_from_zero() {
        let mut pair = MomentumPair::new(store(1.0), 0.999);
        for p in pair.momentum.iter_mut() {
            p.value.fill(0.0);
        }
        pair.update();
        for p in pair.momentum.iter() {
            for v in p.value.iter() {
                assert!((v - 0.001).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn geometric_decay_under_frozen_online() {
        // theta_k(n) = theta_q + (theta_k(0) - theta_q) * m^n
        let m = 0.999f64;
        let mut pair = MomentumPair::new(store(2.0), m);
        for p in pair.momentum.iter_mut() {
            p.value.fill(5.0);
        }
        for _ in 0..100 {
            pair.update();
        }
        let expect = 2.0 + (5.0 - 2.0) * m.powi(100);
        for p in pair.momentum.iter() {
            for v in p.value.iter() {
                assert!(
                    (v - expect).abs() < 1e-6,
                    "{}: {v} vs closed form {expect}",
                    p.name
                );
            }
        }
    }

    #[test]
    fn structural_identity() {
        let pair = MomentumPair::new(store(1.0), 0.999);
        assert!(pair.shapes_match());
    }
}
