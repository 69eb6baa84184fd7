//! SGD with momentum and selective weight decay (weights only; biases and
//! norm parameters are excluded).

use crate::float::Scalar;
use crate::nn::{ParamKind, ParamStore};
use ndarray::ArrayD;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Sgd<F> {
    /// velocity per trainable parameter, keyed by name
    pub velocity: BTreeMap<String, ArrayD<F>>,
    pub momentum: F,
    pub weight_decay: F,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(params: &ParamStore<F>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params
            .iter()
            .filter(|p| p.kind != ParamKind::Buffer)
            .map(|p| (p.name.clone(), ArrayD::zeros(p.value.raw_dim())))
            .collect();
        Sgd {
            velocity,
            momentum: F::from_f64(momentum),
            weight_decay: F::from_f64(weight_decay),
        }
    }

    /// v <- mu * v + (g + wd * theta); theta <- theta - lr * v
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[(String, ArrayD<F>)], lr: F) {
        for (name, grad) in grads {
            let kind = params.kind(name);
            debug_assert!(kind != ParamKind::Buffer, "gradient for buffer '{name}'");
            let decay = if kind == ParamKind::Weight { self.weight_decay } else { F::zero() };
            let theta = params.get_mut(name).expect("unknown param in gradient list");
            let v = self.velocity.get_mut(name).expect("no velocity slot");
            ndarray::Zip::from(v.view_mut())
                .and(theta.view_mut())
                .and(grad.view())
                .for_each(|v, t, &g| {
                    *v = *v * self.momentum + g + decay * *t;
                    *t = *t - lr * *v;
                });
        }
    }
}
