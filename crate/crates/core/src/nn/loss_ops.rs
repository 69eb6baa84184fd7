//! Fused loss ops: two-class softmax cross-entropy over score maps, and the
//! positive/negative pair contrastive loss with the max-subtraction trick.

use crate::float::Scalar;
use ndarray::{Array3, ArrayD, IxDyn};

use super::{Backward, Graph, NodeId};

pub const CE_CLAMP: f64 = 1e-7;

struct SoftmaxCeBack<F> {
    labels: Array3<u8>,
    /// cached probability of class 1 per pixel
    p1: Vec<F>,
}

impl<F: Scalar> Backward<F> for SoftmaxCeBack<F> {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let logits = inputs[0];
        let (b, _two, h, w) = (
            logits.shape()[0],
            logits.shape()[1],
            logits.shape()[2],
            logits.shape()[3],
        );
        let n = b * h * w;
        let gv = g.iter().copied().next().unwrap() / F::from_usize(n);
        let lo = F::from_f64(CE_CLAMP);
        let hi = F::one() - lo;
        let mut dx = ArrayD::<F>::zeros(logits.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        let lab = self.labels.as_slice().unwrap();
        let hw = h * w;
        for bi in 0..b {
            for i in 0..hw {
                let p1 = self.p1[bi * hw + i];
                // clamp saturates the log; gradient is zero there
                if p1 <= lo || p1 >= hi {
                    continue;
                }
                let y = lab[bi * hw + i];
                let d1 = if y == 1 { p1 - F::one() } else { p1 };
                dxs[(bi * 2) * hw + i] = -d1 * gv; // d0 = -(softmax1 - y) = softmax0 - (1-y)
                dxs[(bi * 2 + 1) * hw + i] = d1 * gv;
            }
        }
        vec![Some(dx)]
    }
}

struct ScLossBack<F> {
    tau: F,
}

impl<F: Scalar> Backward<F> for ScLossBack<F> {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let (anchors, pos, neg) = (inputs[0], inputs[1], inputs[2]);
        let (a_cnt, d) = (anchors.shape()[0], anchors.shape()[1]);
        let m = pos.shape()[1];
        let gscale = g.iter().copied().next().unwrap() / F::from_usize(a_cnt);
        let inv_tau = F::one() / self.tau;
        let anc = anchors.as_slice().unwrap();
        let ps = pos.as_slice().unwrap();
        let ns = neg.as_slice().unwrap();

        let mut da = ArrayD::<F>::zeros(anchors.raw_dim());
        let mut dp = ArrayD::<F>::zeros(pos.raw_dim());
        let mut dn = ArrayD::<F>::zeros(neg.raw_dim());
        let das = da.as_slice_mut().unwrap();
        let dps = dp.as_slice_mut().unwrap();
        let dns = dn.as_slice_mut().unwrap();

        let mf = F::from_usize(m);
        for ai in 0..a_cnt {
            let a = &anc[ai * d..(ai + 1) * d];
            let pb = &ps[ai * m * d..(ai + 1) * m * d];
            let nb = &ns[ai * m * d..(ai + 1) * m * d];
            let sp: Vec<F> = (0..m).map(|j| dot(a, &pb[j * d..(j + 1) * d]) * inv_tau).collect();
            let sn: Vec<F> = (0..m).map(|k| dot(a, &nb[k * d..(k + 1) * d]) * inv_tau).collect();
            let mx = sp
                .iter()
                .chain(sn.iter())
                .fold(F::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
            let en: Vec<F> = sn.iter().map(|&v| (v - mx).exp()).collect();
            let s: F = en.iter().fold(F::zero(), |acc, &v| acc + v);
            // dL/dsp_j = (q_j - 1)/M with q_j = e^{sp_j}/(e^{sp_j} + S)
            // dL/dsn_k = e^{sn_k} * (1/M) sum_j 1/(e^{sp_j} + S)
            let mut c_sum = F::zero();
            let mut dsp = vec![F::zero(); m];
            for j in 0..m {
                let ep = (sp[j] - mx).exp();
                let denom = ep + s;
                dsp[j] = (ep / denom - F::one()) / mf;
                c_sum += F::one() / denom;
            }
            c_sum /= mf;
            for jk in 0..m {
                let dspj = dsp[jk] * gscale * inv_tau;
                let dsnk = en[jk] * c_sum * gscale * inv_tau;
                let prow = &pb[jk * d..(jk + 1) * d];
                let nrow = &nb[jk * d..(jk + 1) * d];
                for di in 0..d {
                    das[ai * d + di] += dspj * prow[di] + dsnk * nrow[di];
                    dps[(ai * m + jk) * d + di] = dspj * a[di];
                    dns[(ai * m + jk) * d + di] = dsnk * a[di];
                }
            }
        }
        vec![Some(da), Some(dp), Some(dn)]
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Per-anchor contrastive loss over one (anchor, positives, negatives) set.
/// Pure math shared by the graph op; keys and anchor must have equal dims.
pub fn sc_loss_single<F: Scalar>(anchor: &[F], positives: &[&[F]], negatives: &[&[F]], tau: F) -> F {
    let inv_tau = F::one() / tau;
    let sp: Vec<F> = positives.iter().map(|p| dot(anchor, p) * inv_tau).collect();
    let sn: Vec<F> = negatives.iter().map(|n| dot(anchor, n) * inv_tau).collect();
    let mx = sp
        .iter()
        .chain(sn.iter())
        .fold(F::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    let s: F = sn.iter().fold(F::zero(), |acc, &v| acc + (v - mx).exp());
    let mut total = F::zero();
    for &spj in &sp {
        let ep = (spj - mx).exp();
        total += -spj + mx + (ep + s).ln();
    }
    total / F::from_usize(sp.len())
}

impl<F: Scalar> Graph<F> {
    /// Mean two-class softmax cross-entropy between a (B,2,H,W) score map and
    /// binary labels, with probabilities clamped to [1e-7, 1-1e-7].
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &Array3<u8>) -> NodeId {
        let lv = &self.nodes[logits].value;
        assert_eq!(lv.shape()[1], 2, "two-class score map expected");
        let (b, h, w) = (lv.shape()[0], lv.shape()[2], lv.shape()[3]);
        assert_eq!(labels.shape(), &[b, h, w]);
        let ls = lv.as_slice().unwrap();
        let lab = labels.as_slice().unwrap();
        let hw = h * w;
        let lo = F::from_f64(CE_CLAMP);
        let hi = F::one() - lo;
        let mut p1 = vec![F::zero(); b * hw];
        let mut total = F::zero();
        for bi in 0..b {
            for i in 0..hw {
                let l0 = ls[(bi * 2) * hw + i];
                let l1 = ls[(bi * 2 + 1) * hw + i];
                let mx = if l0 > l1 { l0 } else { l1 };
                let e0 = (l0 - mx).exp();
                let e1 = (l1 - mx).exp();
                let p = e1 / (e0 + e1);
                p1[bi * hw + i] = p;
                let pc = if p < lo {
                    lo
                } else if p > hi {
                    hi
                } else {
                    p
                };
                let li = if lab[bi * hw + i] == 1 {
                    -(pc.ln())
                } else {
                    -((F::one() - pc).ln())
                };
                total += li;
            }
        }
        let mean = total / F::from_usize(b * hw);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), mean),
            vec![logits],
            Box::new(SoftmaxCeBack { labels: labels.clone(), p1 }),
        )
    }

    /// Mean over anchors of the per-anchor contrastive loss.
    /// anchors: (A, D); positives/negatives: (A, M, D).
    pub fn contrastive_loss(&mut self, anchors: NodeId, positives: NodeId, negatives: NodeId, tau: F) -> NodeId {
        assert!(tau > F::zero(), "temperature must be positive");
        let av = &self.nodes[anchors].value;
        let pv = &self.nodes[positives].value;
        let nv = &self.nodes[negatives].value;
        let (a_cnt, d) = (av.shape()[0], av.shape()[1]);
        let m = pv.shape()[1];
        assert_eq!(pv.shape(), &[a_cnt, m, d]);
        assert_eq!(nv.shape(), &[a_cnt, m, d]);
        let anc = av.as_slice().unwrap();
        let ps = pv.as_slice().unwrap();
        let ns = nv.as_slice().unwrap();
        let mut total = F::zero();
        for ai in 0..a_cnt {
            let a = &anc[ai * d..(ai + 1) * d];
            let prows: Vec<&[F]> = (0..m).map(|j| &ps[(ai * m + j) * d..(ai * m + j + 1) * d]).collect();
            let nrows: Vec<&[F]> = (0..m).map(|k| &ns[(ai * m + k) * d..(ai * m + k + 1) * d]).collect();
            total += sc_loss_single(a, &prows, &nrows, tau);
        }
        let mean = total / F::from_usize(a_cnt);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), mean),
            vec![anchors, positives, negatives],
            Box::new(ScLossBack { tau }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_grad, finite_diff, max_rel_err, rand_array};
    use ndarray::Array3;

    fn unit_rows(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut a = rand_array::<f64>(shape, seed);
        let d = *shape.last().unwrap();
        let rows = a.len() / d;
        let s = a.as_slice_mut().unwrap();
        for r in 0..rows {
            let row = &mut s[r * d..(r + 1) * d];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        a
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot() {
        let labels = Array3::from_shape_fn((1, 2, 3), |(_, i, j)| ((i + j) % 2) as u8);
        check_grad(&[1, 2, 2, 3], 91, |g, x| g.softmax_cross_entropy(x, &labels));

        // direct identity check
        let logits = rand_array::<f64>(&[1, 2, 2, 3], 92);
        let mut g: Graph<f64> = Graph::new(true);
        let x = g.leaf(logits.clone(), true);
        let loss = g.softmax_cross_entropy(x, &labels);
        let grads = g.backward(loss);
        let dx = grads.get(x).unwrap();
        let n = 6.0;
        for i in 0..2 {
            for j in 0..3 {
                let l0 = logits[[0, 0, i, j]];
                let l1 = logits[[0, 1, i, j]];
                let e0 = l0.exp();
                let e1 = l1.exp();
                let p1 = e1 / (e0 + e1);
                let y = labels[[0, i, j]] as f64;
                assert!((dx[[0, 1, i, j]] - (p1 - y) / n).abs() < 1e-12);
                assert!((dx[[0, 0, i, j]] - ((1.0 - p1) - (1.0 - y)) / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sc_loss_gradients_anchor_and_keys() {
        let (a, m, d) = (2, 3, 4);
        check_grad(&[a, d], 93, |g, x| {
            let p = g.constant(unit_rows(&[a, m, d], 94));
            let n = g.constant(unit_rows(&[a, m, d], 95));
            g.contrastive_loss(x, p, n, 0.1)
        });
        check_grad(&[a, m, d], 96, |g, p| {
            let x = g.constant(unit_rows(&[a, d], 97));
            let n = g.constant(unit_rows(&[a, m, d], 98));
            g.contrastive_loss(x, p, n, 0.1)
        });
        check_grad(&[a, m, d], 99, |g, n| {
            let x = g.constant(unit_rows(&[a, d], 100));
            let p = g.constant(unit_rows(&[a, m, d], 101));
            g.contrastive_loss(x, p, n, 0.1)
        });
    }

    #[test]
    fn sc_loss_closed_forms() {
        // M=1, positive == anchor (sim 1), negative orthogonal (sim 0), tau=0.1:
        // L = log(1 + e^{-10})
        let a = vec![1.0f64, 0.0];
        let p = vec![1.0f64, 0.0];
        let n = vec![0.0f64, 1.0];
        let l = sc_loss_single(&a, &[&p], &[&n], 0.1);
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-9, "{l} vs {expected}");

        // all positives and negatives equal to the anchor: log(1+M), tau-free
        for m in [1usize, 7, 1000] {
            for tau in [0.05f64, 0.1, 1.0] {
                let rows: Vec<&[f64]> = (0..m).map(|_| a.as_slice()).collect();
                let l = sc_loss_single(&a, &rows, &rows, tau);
                assert!((l - (1.0 + m as f64).ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sc_loss_matches_two_loop_oracle_and_fd() {
        let (a_cnt, m, d) = (3, 8, 6);
        let anchors = unit_rows(&[a_cnt, d], 111);
        let pos = unit_rows(&[a_cnt, m, d], 112);
        let neg = unit_rows(&[a_cnt, m, d], 113);
        let tau = 0.1f64;

        let mut g: Graph<f64> = Graph::new(true);
        let aid = g.leaf(anchors.clone(), true);
        let pid = g.constant(pos.clone());
        let nid = g.constant(neg.clone());
        let loss = g.contrastive_loss(aid, pid, nid, tau);
        let got = g.scalar(loss);

        // naive two-loop oracle, no max trick
        let mut want = 0.0;
        for ai in 0..a_cnt {
            let mut per_anchor = 0.0;
            for j in 0..m {
                let spj: f64 = (0..d).map(|k| anchors[[ai, k]] * pos[[ai, j, k]]).sum::<f64>() / tau;
                let mut denom = spj.exp();
                for kn in 0..m {
                    let snk: f64 =
                        (0..d).map(|k| anchors[[ai, k]] * neg[[ai, kn, k]]).sum::<f64>() / tau;
                    denom += snk.exp();
                }
                per_anchor += -(spj.exp() / denom).ln();
            }
            want += per_anchor / m as f64;
        }
        want /= a_cnt as f64;
        assert!((got - want).abs() / want.abs().max(1e-12) < 1e-12);

        // FD on anchors at 1e-4 tolerance (spec)
        let grads = g.backward(loss);
        let analytic = grads.get(aid).unwrap().clone();
        let numeric = finite_diff(&anchors, 1e-6, |xv| {
            let mut g: Graph<f64> = Graph::new(true);
            let a = g.leaf(xv.clone(), false);
            let p = g.constant(pos.clone());
            let n = g.constant(neg.clone());
            let l = g.contrastive_loss(a, p, n, tau);
            g.scalar(l)
        });
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }
}
