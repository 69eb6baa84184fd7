//! Named parameter store shared by the online network, its momentum mirror,
//! and optimizer state.

use crate::float::Scalar;
use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Conv / linear weight: trained, weight decay applies.
    Weight,
    /// Bias, batch-norm gamma/beta: trained, no weight decay.
    BiasOrNorm,
    /// Running statistics etc.: never trained.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: ArrayD<F>,
    pub kind: ParamKind,
}

/// Insertion-ordered so initialization and checkpoints are deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    entries: Vec<Param<F>>,
    index: BTreeMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<F>, kind: ParamKind) {
        assert!(!self.index.contains_key(name), "duplicate param '{name}'");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param { name: name.to_string(), value, kind });
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<F>> {
        self.index.get(name).copied().map(move |i| &mut self.entries[i].value)
    }

    pub fn kind(&self, name: &str) -> ParamKind {
        self.index
            .get(name)
            .map(|&i| self.entries[i].kind)
            .unwrap_or_else(|| panic!("unknown param '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.entries.iter_mut()
    }

    /// Total element count over all entries.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Element count over trained entries only.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.kind != ParamKind::Buffer)
            .map(|p| p.value.len())
            .sum()
    }

    /// True when both stores hold the same names with the same shapes,
    /// compared entry by entry.
    pub fn same_shapes(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|(a, b)| {
                a.name == b.name && a.value.shape() == b.value.shape() && a.kind == b.kind
            })
    }

    /// theta_self <- m * theta_self + (1 - m) * theta_other, every entry.
    /// Evaluated as theta += (1-m) * (other - theta), so equal stores are a
    /// bit-exact fixed point.
    pub fn ema_update_from(&mut self, other: &Self, m: F) {
        assert!(self.same_shapes(other), "EMA over mismatched stores");
        let one_minus = F::one() - m;
        for (dst, src) in self.entries.iter_mut().zip(other.entries.iter()) {
            dst.value.zip_mut_with(&src.value, |d, &s| *d = *d + one_minus * (s - *d));
        }
    }

    /// Update a batch-norm running statistic: r <- (1-rho) * r + rho * batch.
    pub fn update_running(&mut self, name: &str, batch: &[F], rho: F) {
        let v = self
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown running stat '{name}'"));
        let keep = F::one() - rho;
        for (r, &b) in v.iter_mut().zip(batch.iter()) {
            *r = *r * keep + b * rho;
        }
    }
}

/// He-normal init for conv weights (fan_in = IC * K * K).
pub fn he_normal<F: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(shape.to_vec(), || F::from_f64(gaussian(rng) * std))
}

/// Standard normal via Box-Muller; two uniform draws per sample keeps the
/// stream advance deterministic.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn ema_and_shape_identity() {
        let mut a: ParamStore<f64> = ParamStore::new();
        a.insert("w", ArrayD::from_elem(IxDyn(&[2, 2]), 0.0), ParamKind::Weight);
        let mut b = a.clone();
        *b.get_mut("w").unwrap() = ArrayD::from_elem(IxDyn(&[2, 2]), 1.0);
        assert!(a.same_shapes(&b));
        a.ema_update_from(&b, 0.999);
        assert!((a.get("w").unwrap()[[0, 0]] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn he_normal_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: ArrayD<f64> = he_normal(&[64, 32, 3, 3], &mut rng);
        let std = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        let expect = (2.0f64 / (32.0 * 9.0)).sqrt();
        assert!((std - expect).abs() / expect < 0.1);
    }
}
