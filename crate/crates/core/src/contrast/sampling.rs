//! Anchor position selection and hard/random key sampling from the queues.

use crate::contrast::{CandidateClass, CategoryQueue, ContrastiveConfig, HyperPixelCandidate};
use crate::error::{CoreError, Result};
use crate::float::Scalar;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Anchors chosen for one batch image.
#[derive(Debug, Clone)]
pub struct AnchorSelection {
    /// (row, col) grid positions per class
    pub landslide: Vec<(usize, usize)>,
    pub background: Vec<(usize, usize)>,
    /// true when a class had fewer than K candidates and was short-sampled
    pub short_sampled: bool,
}

/// Uniform sampling of up to K candidate positions per class, without
/// replacement. A class with zero candidates is reported as an error by the
/// caller's choice; here it yields an empty list with the short flag set.
pub fn select_anchor_positions(
    candidates: &[HyperPixelCandidate],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> AnchorSelection {
    let mut slide: Vec<(usize, usize)> = Vec::new();
    let mut bg: Vec<(usize, usize)> = Vec::new();
    for c in candidates {
        match c.class {
            CandidateClass::Landslide => slide.push(c.grid_pos),
            CandidateClass::Background => bg.push(c.grid_pos),
        }
    }
    let short = slide.len() < k || bg.len() < k;
    let landslide = sample_without_replacement(&mut slide, k, rng);
    let background = sample_without_replacement(&mut bg, k, rng);
    AnchorSelection { landslide, background, short_sampled: short }
}

/// Partial Fisher-Yates: the first min(k, n) entries after shuffling.
fn sample_without_replacement<T: Copy>(pool: &mut [T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = pool.len();
    let take = k.min(n);
    for i in 0..take {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool[..take].to_vec()
}

/// Hard + random key selection for one anchor.
///
/// Similarity is the dot product of unit vectors. From the same-class queue
/// the floor(hard_fraction * M) lowest-similarity keys are taken as hard
/// positives and the rest drawn uniformly from the remaining keys; the
/// opposite-class queue mirrors this with highest similarity as hard.
/// Ties break by slot index, so the result is deterministic.
pub fn sample_keys<F: Scalar>(
    anchor: &[F],
    same_queue: &CategoryQueue<F>,
    other_queue: &CategoryQueue<F>,
    m: usize,
    hard_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<F>, Array2<F>)> {
    for q in [same_queue, other_queue] {
        // a freshly initialized queue is usable as-is (random keys); once real
        // keys start arriving, at least M of them must be present
        let usable = if q.total_written == 0 { q.len() } else { q.real_keys() };
        if usable < m {
            return Err(CoreError::QueueUnderfilled { have: usable, need: m });
        }
    }
    let positives = pick_polarity(anchor, same_queue, m, hard_fraction, /*hard_low=*/ true, rng);
    let negatives = pick_polarity(anchor, other_queue, m, hard_fraction, /*hard_low=*/ false, rng);
    Ok((positives, negatives))
}

fn pick_polarity<F: Scalar>(
    anchor: &[F],
    queue: &CategoryQueue<F>,
    m: usize,
    hard_fraction: f64,
    hard_low: bool,
    rng: &mut ChaCha8Rng,
) -> Array2<F> {
    let l = queue.len();
    let d = queue.dim();
    let mut sims: Vec<(f64, usize)> = (0..l)
        .map(|r| {
            let row = queue.buffer.row(r);
            let s: f64 = row
                .iter()
                .zip(anchor.iter())
                .map(|(a, b)| a.to_f64_() * b.to_f64_())
                .sum();
            (s, r)
        })
        .collect();
    // stable ordering: similarity first, slot index second
    sims.sort_by(|a, b| {
        let ord = a.0.partial_cmp(&b.0).unwrap();
        let ord = if hard_low { ord } else { ord.reverse() };
        ord.then(a.1.cmp(&b.1))
    });
    let hard_n = ((hard_fraction * m as f64).floor() as usize).min(m);
    let mut chosen: Vec<usize> = sims[..hard_n].iter().map(|&(_, r)| r).collect();
    let mut rest: Vec<usize> = sims[hard_n..].iter().map(|&(_, r)| r).collect();
    let random = sample_without_replacement(&mut rest, m - hard_n, rng);
    chosen.extend(random);

    let mut out = Array2::<F>::zeros((m, d));
    for (i, &slot) in chosen.iter().enumerate() {
        out.row_mut(i).assign(&queue.buffer.row(slot));
    }
    out
}

/// Convenience: keys for a whole anchor set, stacked (A, M, D) per polarity.
#[allow(clippy::type_complexity)]
pub fn sample_keys_batch<F: Scalar>(
    anchors: &Array2<F>,
    classes: &[CandidateClass],
    slide_queue: &CategoryQueue<F>,
    bg_queue: &CategoryQueue<F>,
    config: &ContrastiveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ndarray::Array3<F>, ndarray::Array3<F>)> {
    let a = anchors.shape()[0];
    let d = anchors.shape()[1];
    let m = config.m;
    let mut pos = ndarray::Array3::<F>::zeros((a, m, d));
    let mut neg = ndarray::Array3::<F>::zeros((a, m, d));
    for i in 0..a {
        let row: Vec<F> = anchors.row(i).to_vec();
        let (same, other) = match classes[i] {
            CandidateClass::Landslide => (slide_queue, bg_queue),
            CandidateClass::Background => (bg_queue, slide_queue),
        };
        let (p, n) = sample_keys(&row, same, other, m, config.hard_fraction, rng)?;
        pos.index_axis_mut(ndarray::Axis(0), i).assign(&p);
        neg.index_axis_mut(ndarray::Axis(0), i).assign(&n);
    }
    Ok((pos, neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::CandidateClass;
    use crate::rng;

    fn fake_candidates(slide: usize, bg: usize) -> Vec<HyperPixelCandidate> {
        let mut v = Vec::new();
        for i in 0..slide {
            v.push(HyperPixelCandidate {
                grid_pos: (i / 8, i % 8),
                class: CandidateClass::Landslide,
                landslide_pixel_count: 30,
                mean_elevation_m: 100.0,
                component_id: Some(0),
            });
        }
        for i in 0..bg {
            v.push(HyperPixelCandidate {
                grid_pos: (8 + i / 8, i % 8),
                class: CandidateClass::Background,
                landslide_pixel_count: 0,
                mean_elevation_m: 90.0,
                component_id: None,
            });
        }
        v
    }

    #[test]
    fn samples_k_distinct_positions() {
        let mut r = rng::stream(1, "anchor");
        let sel = select_anchor_positions(&fake_candidates(40, 40), 16, &mut r);
        assert_eq!(sel.landslide.len(), 16);
        assert_eq!(sel.background.len(), 16);
        assert!(!sel.short_sampled);
        let set: std::collections::BTreeSet<_> = sel.landslide.iter().collect();
        assert_eq!(set.len(), 16, "positions must be distinct");
    }

    #[test]
    fn short_sampling_takes_all() {
        let mut r = rng::stream(2, "anchor");
        let sel = select_anchor_positions(&fake_candidates(10, 40), 16, &mut r);
        assert_eq!(sel.landslide.len(), 10);
        assert!(sel.short_sampled);
    }

    #[test]
    fn anchor_selection_deterministic() {
        let c = fake_candidates(40, 40);
        let mut r1 = rng::stream(3, "anchor");
        let mut r2 = rng::stream(3, "anchor");
        let s1 = select_anchor_positions(&c, 16, &mut r1);
        let s2 = select_anchor_positions(&c, 16, &mut r2);
        assert_eq!(s1.landslide, s2.landslide);
        assert_eq!(s1.background, s2.background);
    }

    fn axis_queue(l: usize, d: usize) -> CategoryQueue<f64> {
        // slot r points along axis r % d
        let mut r = rng::stream(9, "qinit");
        let mut q = CategoryQueue::random_init(l, d, &mut r);
        for slot in 0..l {
            let mut row = ndarray::Array1::<f64>::zeros(d);
            row[slot % d] = 1.0;
            q.buffer.row_mut(slot).assign(&row);
            q.age[slot] = 0;
        }
        q.total_written = l;
        q
    }

    #[test]
    fn hard_and_random_counts() {
        let (l, d, m) = (256, 16, 100);
        let same = axis_queue(l, d);
        let other = axis_queue(l, d);
        let mut anchor = vec![0.0f64; d];
        anchor[0] = 1.0;
        let mut r = rng::stream(4, "key");
        let (p, n) = sample_keys(&anchor, &same, &other, m, 0.10, &mut r).unwrap();
        assert_eq!(p.shape(), &[m, 16]);
        assert_eq!(n.shape(), &[m, 16]);
        // hard positives: the 10 lowest similarities; anchor is axis 0, so
        // slots on other axes (sim 0) come first, ties by slot index ->
        // slots 1..=10 (slot 0 has sim 1)
        for i in 0..10 {
            let row = p.row(i);
            assert_eq!(row[(i + 1) % d], 1.0, "hard positive {i} wrong");
        }
        // hard negatives: highest similarity first -> slots pointing along
        // axis 0: slots 0, 16, 32, ...
        for i in 0..10 {
            let row = n.row(i);
            assert_eq!(row[0], 1.0, "hard negative {i} should align with anchor");
        }
    }

    #[test]
    fn key_identical_to_anchor_lands_in_hard_negatives() {
        let (l, d, m) = (64, 8, 16);
        let same = axis_queue(l, d);
        let mut other = axis_queue(l, d);
        let mut anchor = vec![0.0f64; d];
        anchor[3] = 1.0;
        // overwrite slot 40 of the opposite queue with the anchor itself
        let a = ndarray::Array1::from(anchor.clone());
        other.buffer.row_mut(40).assign(&a);
        let mut r = rng::stream(5, "key");
        let (_, n) = sample_keys(&anchor, &same, &other, m, 0.10, &mut r).unwrap();
        let hard0 = n.row(0);
        assert_eq!(hard0.to_vec(), anchor);
    }

    #[test]
    fn underfilled_queue_signaled() {
        let (l, d) = (32, 8);
        let same = axis_queue(l, d);
        let mut other = axis_queue(l, d);
        // a queue that has started receiving real keys but has fewer than M
        other.age.iter_mut().for_each(|a| *a = super::super::queue::AGE_INIT);
        other.total_written = 4;
        for s in 0..4 {
            other.age[s] = 0;
        }
        let anchor = vec![1.0f64; d];
        let mut r = rng::stream(6, "key");
        let err = sample_keys(&anchor, &same, &other, 16, 0.10, &mut r).unwrap_err();
        assert!(matches!(err, CoreError::QueueUnderfilled { have: 4, need: 16 }));
    }

    #[test]
    fn orthogonal_anchor_ties_break_by_slot_index() {
        let (l, d, m) = (32, 8, 8);
        // every key orthogonal to the anchor: all sims are 0
        let mut q = axis_queue(l, d);
        for slot in 0..l {
            let mut row = ndarray::Array1::<f64>::zeros(d);
            row[1 + (slot % (d - 1))] = 1.0; // never axis 0
            q.buffer.row_mut(slot).assign(&row);
        }
        let mut anchor = vec![0.0f64; d];
        anchor[0] = 1.0;
        let mut r = rng::stream(7, "key");
        let (p, _) = sample_keys(&anchor, &q, &q, m, 0.25, &mut r).unwrap();
        // hard count = 2: ties resolved to slots 0 and 1
        assert_eq!(p.row(0), q.buffer.row(0));
        assert_eq!(p.row(1), q.buffer.row(1));
    }
}
