//! Fixed-length per-class ring buffer of unit-norm key embeddings.
//!
//! Updates are FIFO: a batch of new keys overwrites the oldest slots. Slots
//! carry the batch counter that wrote them, so warm-up logic can tell real
//! keys from the random initialization.

use crate::error::{CoreError, Result};
use crate::float::Scalar;
use crate::nn::params::gaussian;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

/// Slot age for the random initialization (never written by a real batch).
pub const AGE_INIT: i64 = -1;

#[derive(Debug, Clone)]
pub struct CategoryQueue<F> {
    /// (L, D), rows unit norm
    pub buffer: Array2<F>,
    /// next write position
    pub head: usize,
    /// batch counter that wrote each slot; AGE_INIT for initial rows
    pub age: Vec<i64>,
    /// total real keys written since initialization
    pub total_written: usize,
}

impl<F: Scalar> CategoryQueue<F> {
    /// Random unit-vector initialization, deterministic in the rng state.
    pub fn random_init(l: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut buffer = Array2::<F>::zeros((l, d));
        for mut row in buffer.rows_mut() {
            let mut norm_sq = 0.0f64;
            let mut vals = vec![0.0f64; d];
            for v in vals.iter_mut() {
                *v = gaussian(rng);
                norm_sq += *v * *v;
            }
            let inv = 1.0 / norm_sq.sqrt();
            for (dst, v) in row.iter_mut().zip(vals.iter()) {
                *dst = F::from_f64(v * inv);
            }
        }
        CategoryQueue { buffer, head: 0, age: vec![AGE_INIT; l], total_written: 0 }
    }

    pub fn len(&self) -> usize {
        self.buffer.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.buffer.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Count of slots written by real batches (not initialization).
    pub fn real_keys(&self) -> usize {
        self.age.iter().filter(|&&a| a != AGE_INIT).count()
    }

    /// True once every initial slot has been overwritten at least once.
    pub fn fully_overwritten(&self) -> bool {
        self.total_written >= self.len()
    }

    /// FIFO update: write `new_keys` (N, D) at the head, advancing it modulo
    /// L; the N oldest slots are the ones evicted.
    pub fn enqueue_dequeue(&mut self, new_keys: &Array2<F>, batch: i64) -> Result<()> {
        let n = new_keys.shape()[0];
        let l = self.len();
        if n > l {
            return Err(CoreError::QueueOverflow { k: n, l });
        }
        debug_assert_eq!(new_keys.shape()[1], self.dim());
        for r in 0..n {
            let slot = (self.head + r) % l;
            self.buffer.row_mut(slot).assign(&new_keys.row(r));
            self.age[slot] = batch;
        }
        self.head = (self.head + n) % l;
        self.total_written += n;
        Ok(())
    }

    /// The `n` most recently enqueued rows, newest last.
    pub fn newest(&self, n: usize) -> Array2<F> {
        let l = self.len();
        let mut out = Array2::<F>::zeros((n, self.dim()));
        for i in 0..n {
            let slot = (self.head + l - n + i) % l;
            out.row_mut(i).assign(&self.buffer.row(slot));
        }
        out
    }

    /// Worst deviation of any row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.buffer
            .rows()
            .into_iter()
            .map(|r| {
                let n: f64 = r.iter().map(|v| v.to_f64_() * v.to_f64_()).sum::<f64>().sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}
