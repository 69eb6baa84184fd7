//! Loss composition: pixel cross-entropy plus the weighted contrastive term.

use crate::error::{CoreError, Result};
use crate::float::Scalar;
use crate::nn::loss_ops::CE_CLAMP;
use ndarray::{Array3, Array4};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0, beta: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(CoreError::InvalidConfig("alpha must be positive".into()));
        }
        if self.beta < 0.0 {
            return Err(CoreError::InvalidConfig("beta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-pixel binary cross-entropy over a two-class score map, with the
/// landslide probability clamped to [1e-7, 1 - 1e-7]. Returns the per-pixel
/// loss map and its mean. The differentiable twin lives on the graph as
/// `softmax_cross_entropy`.
pub fn cross_entropy_map<F: Scalar>(logits: &Array4<F>, labels: &Array3<u8>) -> (Array3<F>, F) {
    let (b, two, h, w) = logits.dim();
    assert_eq!(two, 2);
    assert_eq!(labels.dim(), (b, h, w));
    let lo = F::from_f64(CE_CLAMP);
    let hi = F::one() - lo;
    let mut map = Array3::<F>::zeros((b, h, w));
    let mut total = F::zero();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let l0 = logits[[bi, 0, y, x]];
                let l1 = logits[[bi, 1, y, x]];
                let mx = if l0 > l1 { l0 } else { l1 };
                let p = (l1 - mx).exp() / ((l0 - mx).exp() + (l1 - mx).exp());
                let p = if p < lo {
                    lo
                } else if p > hi {
                    hi
                } else {
                    p
                };
                let li = if labels[[bi, y, x]] == 1 {
                    -(p.ln())
                } else {
                    -((F::one() - p).ln())
                };
                map[[bi, y, x]] = li;
                total += li;
            }
        }
    }
    let mean = total / F::from_usize(b * h * w);
    (map, mean)
}

/// Total loss over already-aggregated terms:
/// alpha * sum(ce_terms) + beta * sum(sc_terms).
/// An empty contrastive list (warm-up, no candidates) reduces to pure
/// cross-entropy training.
pub fn total_loss<F: Scalar>(ce_terms: &[F], sc_terms: &[F], config: &LossConfig) -> Result<F> {
    config.validate()?;
    let ce: F = ce_terms.iter().fold(F::zero(), |a, &b| a + b);
    let sc: F = sc_terms.iter().fold(F::zero(), |a, &b| a + b);
    Ok(F::from_f64(config.alpha) * ce + F::from_f64(config.beta) * sc)
}
