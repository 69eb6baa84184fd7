//! Batch normalization, per-pixel L2 normalization, and pixel gather.

use crate::float::Scalar;
use ndarray::{ArrayD, IxDyn};

use super::{Backward, BnBatchStats, Graph, NodeId};

pub const BN_EPS: f64 = 1e-5;

struct BnTrainBack<F> {
    mean: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> Backward<F> for BnTrainBack<F> {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let n = b * h * w;
        let nf = F::from_usize(n);
        let xs = x.as_slice().unwrap();
        let gs = g.as_slice().unwrap();
        let gam = gamma.as_slice().unwrap();

        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        // first pass: sum(dy), sum(dy * xhat) per channel
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let (m, istd) = (self.mean[ci], self.inv_std[ci]);
                let mut s1 = F::zero();
                let mut s2 = F::zero();
                for i in 0..h * w {
                    let dy = gs[base + i];
                    let xh = (xs[base + i] - m) * istd;
                    s1 += dy;
                    s2 += dy * xh;
                }
                dbeta[ci] += s1;
                dgamma[ci] += s2;
            }
        }
        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let (m, istd) = (self.mean[ci], self.inv_std[ci]);
                let k = gam[ci] * istd;
                let mb = dbeta[ci] / nf;
                let mg = dgamma[ci] / nf;
                for i in 0..h * w {
                    let dy = gs[base + i];
                    let xh = (xs[base + i] - m) * istd;
                    dxs[base + i] = k * (dy - mb - xh * mg);
                }
            }
        }
        vec![
            Some(dx),
            Some(ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap()),
            Some(ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
        ]
    }
}

struct BnEvalBack<F> {
    mean: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> Backward<F> for BnEvalBack<F> {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let xs = x.as_slice().unwrap();
        let gs = g.as_slice().unwrap();
        let gam = gamma.as_slice().unwrap();
        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let (m, istd) = (self.mean[ci], self.inv_std[ci]);
                let k = gam[ci] * istd;
                for i in 0..h * w {
                    let dy = gs[base + i];
                    dxs[base + i] = dy * k;
                    dgamma[ci] += dy * (xs[base + i] - m) * istd;
                    dbeta[ci] += dy;
                }
            }
        }
        vec![
            Some(dx),
            Some(ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap()),
            Some(ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
        ]
    }
}

struct L2NormBack<F> {
    eps: F,
}

impl<F: Scalar> Backward<F> for L2NormBack<F> {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], out: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let xs = x.as_slice().unwrap();
        let ys = out.as_slice().unwrap();
        let gs = g.as_slice().unwrap();
        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        let hw = h * w;
        for bi in 0..b {
            for i in 0..hw {
                // norm over channel dim at this pixel
                let mut sq = self.eps;
                for ci in 0..c {
                    let v = xs[(bi * c + ci) * hw + i];
                    sq += v * v;
                }
                let nrm = sq.sqrt();
                let mut ydg = F::zero();
                for ci in 0..c {
                    let idx = (bi * c + ci) * hw + i;
                    ydg += ys[idx] * gs[idx];
                }
                for ci in 0..c {
                    let idx = (bi * c + ci) * hw + i;
                    dxs[idx] = (gs[idx] - ys[idx] * ydg) / nrm;
                }
            }
        }
        vec![Some(dx)]
    }
}

struct GatherPixelsBack {
    positions: Vec<(usize, usize, usize)>,
}

impl<F: Scalar> Backward<F> for GatherPixelsBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        let gs = g.as_slice().unwrap();
        for (n, &(bi, y, xp)) in self.positions.iter().enumerate() {
            for ci in 0..c {
                dxs[((bi * c + ci) * h + y) * w + xp] += gs[n * c + ci];
            }
        }
        vec![Some(dx)]
    }
}

impl<F: Scalar> Graph<F> {
    /// Batch norm over NCHW. In train mode, batch statistics are used and
    /// recorded under `name` so the trainer can update running stats; in eval
    /// mode `running` (mean, var) supplies them.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: (&ArrayD<F>, &ArrayD<F>),
        name: &str,
    ) -> NodeId {
        let xv = &self.nodes[x].value;
        let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let n = b * h * w;
        let eps = F::from_f64(BN_EPS);

        let (mean, var): (Vec<F>, Vec<F>) = if self.train_mode() {
            let xs = xv.as_slice().unwrap();
            let nf = F::from_usize(n);
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * h * w;
                    for i in 0..h * w {
                        mean[ci] += xs[base + i];
                    }
                }
            }
            for m in &mut mean {
                *m /= nf;
            }
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * h * w;
                    let m = mean[ci];
                    for i in 0..h * w {
                        let d = xs[base + i] - m;
                        var[ci] += d * d;
                    }
                }
            }
            for v in &mut var {
                *v /= nf;
            }
            self.record_bn_stats(
                name,
                BnBatchStats { mean: mean.clone(), var: var.clone(), count: n },
            );
            (mean, var)
        } else {
            (
                running.0.iter().copied().collect(),
                running.1.iter().copied().collect(),
            )
        };

        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let xv = &self.nodes[x].value;
        let gam = self.nodes[gamma].value.as_slice().unwrap().to_vec();
        let bet = self.nodes[beta].value.as_slice().unwrap().to_vec();
        let xs = xv.as_slice().unwrap();
        let mut out = ArrayD::<F>::zeros(xv.raw_dim());
        let os = out.as_slice_mut().unwrap();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let (m, istd) = (mean[ci], inv_std[ci]);
                let (ga, be) = (gam[ci], bet[ci]);
                for i in 0..h * w {
                    os[base + i] = (xs[base + i] - m) * istd * ga + be;
                }
            }
        }

        let op: Box<dyn Backward<F>> = if self.train_mode() {
            Box::new(BnTrainBack { mean, inv_std })
        } else {
            Box::new(BnEvalBack { mean, inv_std })
        };
        self.push(out, vec![x, gamma, beta], op)
    }

    /// L2-normalize each pixel vector across the channel dimension.
    pub fn l2_normalize_channels(&mut self, x: NodeId) -> NodeId {
        let eps = F::from_f64(1e-12);
        let xv = &self.nodes[x].value;
        let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let xs = xv.as_slice().unwrap();
        let mut out = ArrayD::<F>::zeros(xv.raw_dim());
        let os = out.as_slice_mut().unwrap();
        let hw = h * w;
        for bi in 0..b {
            for i in 0..hw {
                let mut sq = eps;
                for ci in 0..c {
                    let v = xs[(bi * c + ci) * hw + i];
                    sq += v * v;
                }
                let inv = F::one() / sq.sqrt();
                for ci in 0..c {
                    let idx = (bi * c + ci) * hw + i;
                    os[idx] = xs[idx] * inv;
                }
            }
        }
        self.push(out, vec![x], Box::new(L2NormBack { eps }))
    }

    /// Extract per-pixel channel vectors at `(batch, y, x)` positions -> (N, C).
    pub fn gather_pixels(&mut self, x: NodeId, positions: &[(usize, usize, usize)]) -> NodeId {
        let xv = &self.nodes[x].value;
        let (c, h, w) = (xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let xs = xv.as_slice().unwrap();
        let mut out = ArrayD::<F>::zeros(vec![positions.len(), c]);
        let os = out.as_slice_mut().unwrap();
        for (n, &(bi, y, xp)) in positions.iter().enumerate() {
            assert!(y < h && xp < w, "gather position out of grid");
            for ci in 0..c {
                os[n * c + ci] = xs[((bi * c + ci) * h + y) * w + xp];
            }
        }
        self.push(
            out,
            vec![x],
            Box::new(GatherPixelsBack { positions: positions.to_vec() }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_grad, rand_array};

    #[test]
    fn bn_train_gradients() {
        check_grad(&[2, 3, 4, 4], 61, |g, x| {
            let gamma = g.leaf(rand_array(&[3], 62), false);
            let beta = g.leaf(rand_array(&[3], 63), false);
            let rm = ArrayD::zeros(vec![3]);
            let rv = ArrayD::ones(vec![3]);
            let y = g.batch_norm(x, gamma, beta, (&rm, &rv), "bn");
            let y = g.sigmoid(y);
            g.sum_all(y)
        });
        // gamma/beta direction
        check_grad(&[3], 64, |g, gamma| {
            let x = g.constant(rand_array(&[2, 3, 4, 4], 65));
            let beta = g.constant(rand_array(&[3], 66));
            let rm = ArrayD::zeros(vec![3]);
            let rv = ArrayD::ones(vec![3]);
            let y = g.batch_norm(x, gamma, beta, (&rm, &rv), "bn");
            let y = g.sigmoid(y);
            g.sum_all(y)
        });
    }

    #[test]
    fn bn_eval_gradients() {
        let rm = rand_array::<f64>(&[3], 71);
        let rv = rand_array::<f64>(&[3], 72).mapv(|v: f64| v.abs() + 0.5);
        crate::nn::gradcheck::check_grad_mode(&[2, 3, 4, 4], 73, false, |g, x| {
            let gamma = g.leaf(rand_array(&[3], 74), false);
            let beta = g.leaf(rand_array(&[3], 75), false);
            let y = g.batch_norm(x, gamma, beta, (&rm, &rv), "bn");
            let y = g.sigmoid(y);
            g.sum_all(y)
        });
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let mut g: Graph<f64> = Graph::new(true);
        let x = g.constant(rand_array(&[4, 2, 3, 3], 76));
        let gamma = g.constant(ArrayD::ones(vec![2]));
        let beta = g.constant(ArrayD::zeros(vec![2]));
        let rm = ArrayD::zeros(vec![2]);
        let rv = ArrayD::ones(vec![2]);
        let y = g.batch_norm(x, gamma, beta, (&rm, &rv), "bn");
        let yv = g.value(y);
        for ci in 0..2 {
            let ch = yv.index_axis(ndarray::Axis(1), ci);
            let mean: f64 = ch.iter().sum::<f64>() / ch.len() as f64;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3); // eps-shrunk
        }
        assert_eq!(g.take_bn_stats().len(), 1);
    }

    #[test]
    fn l2_normalize_and_gather_gradients() {
        check_grad(&[2, 4, 3, 3], 81, |g, x| {
            let y = g.l2_normalize_channels(x);
            let picked = g.gather_pixels(y, &[(0, 0, 0), (1, 2, 2), (0, 1, 2)]);
            let s = g.sigmoid(picked);
            g.sum_all(s)
        });
    }

    #[test]
    fn l2_normalize_unit_norm() {
        let mut g: Graph<f32> = Graph::new(false);
        let x = g.constant(rand_array(&[1, 8, 5, 5], 82));
        let y = g.l2_normalize_channels(x);
        let yv = g.value(y);
        for i in 0..5 {
            for j in 0..5 {
                let mut sq = 0.0f32;
                for c in 0..8 {
                    sq += yv[[0, c, i, j]] * yv[[0, c, i, j]];
                }
                assert!((sq.sqrt() - 1.0).abs() < 1e-5);
            }
        }
    }
}
