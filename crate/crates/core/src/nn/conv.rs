//! conv2d / conv_transpose2d via im2col + gemm.
//!
//! Batches are processed in parallel (each batch item writes a disjoint
//! output slab), so results are bit-identical regardless of thread count.
//! im2col buffers are recomputed in backward instead of cached; the gather is
//! cheap next to the gemms and the activation maps dominate memory otherwise.

use crate::float::Scalar;
use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayD, ArrayView2, ArrayView3, ArrayViewMut3, Axis, Ix4};

use super::{Backward, Graph, NodeId};

#[derive(Debug, Clone, Copy)]
pub struct Conv2dCfg {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg { stride: 1, pad: 0, dilation: 1 }
    }
}

impl Conv2dCfg {
    pub fn same_3x3() -> Self {
        Conv2dCfg { stride: 1, pad: 1, dilation: 1 }
    }

    pub fn out_dim(&self, input: usize, k: usize) -> usize {
        (input + 2 * self.pad - self.dilation * (k - 1) - 1) / self.stride + 1
    }
}

/// col[(c*KH+kh)*KW+kw, oy*OW+ox] = x[c, oy*s+kh*d-p, ox*s+kw*d-p]
fn im2col<F: Scalar>(x: &ArrayView3<F>, k: usize, cfg: &Conv2dCfg, col: &mut Array2<F>) {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (cfg.out_dim(h, k), cfg.out_dim(w, k));
    debug_assert_eq!(col.shape(), &[c_in * k * k, oh * ow]);
    let xs = x.as_slice().expect("im2col: non-contiguous input");
    let cs = col.as_slice_mut().unwrap();
    let (s, p, d) = (cfg.stride as isize, cfg.pad as isize, cfg.dilation as isize);
    for c in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let iy = oy as isize * s + kh as isize * d - p;
                    let dst = &mut cs[base + oy * ow..base + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src_row = &xs[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    let off = kw as isize * d - p;
                    // valid ox where 0 <= ox*s + off < w
                    let ox_lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s } as usize;
                    let ox_hi = (((w as isize - 1 - off) / s) + 1).clamp(0, ow as isize) as usize;
                    let (ox_lo, ox_hi) = (ox_lo.min(ow), ox_hi.max(ox_lo.min(ow)));
                    dst[..ox_lo].fill(F::zero());
                    dst[ox_hi..].fill(F::zero());
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    if s == 1 {
                        let start = (ox_lo as isize + off) as usize;
                        dst[ox_lo..ox_hi].copy_from_slice(&src_row[start..start + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src_row[(ox as isize * s + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of im2col: dx[c, iy, ix] += col[(c*KH+kh)*KW+kw, oy*OW+ox]
fn col2im<F: Scalar>(col: &Array2<F>, k: usize, cfg: &Conv2dCfg, dx: &mut ArrayViewMut3<F>) {
    let (c_in, h, w) = (dx.shape()[0], dx.shape()[1], dx.shape()[2]);
    let (oh, ow) = (cfg.out_dim(h, k), cfg.out_dim(w, k));
    let cs = col.as_slice().unwrap();
    let xs = dx.as_slice_mut().unwrap();
    let (s, p, d) = (cfg.stride as isize, cfg.pad as isize, cfg.dilation as isize);
    for c in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let iy = oy as isize * s + kh as isize * d - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    let src = &cs[base + oy * ow..base + (oy + 1) * ow];
                    let off = kw as isize * d - p;
                    let ox_lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s } as usize;
                    let ox_hi = (((w as isize - 1 - off) / s) + 1).clamp(0, ow as isize) as usize;
                    let (ox_lo, ox_hi) = (ox_lo.min(ow), ox_hi.max(ox_lo.min(ow)));
                    for ox in ox_lo..ox_hi {
                        xs[dst_row + (ox as isize * s + off) as usize] += src[ox];
                    }
                }
            }
        }
    }
}

fn weight_mat<F: Scalar>(w: &ArrayD<F>) -> ArrayView2<'_, F> {
    let shape = w.shape();
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    w.view()
        .into_shape_with_order((rows, cols))
        .expect("weight must be standard layout")
}

struct Conv2dBack {
    cfg: Conv2dCfg,
    k: usize,
    has_bias: bool,
}

impl<F: Scalar> Backward<F> for Conv2dBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _out: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let w = inputs[1];
        let (b, oc) = (x.shape()[0], w.shape()[0]);
        let (c_in, h, wdt) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (self.cfg.out_dim(h, self.k), self.cfg.out_dim(wdt, self.k));
        let ckk = c_in * self.k * self.k;
        let w2 = weight_mat(w);

        let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
        let g4 = g.view().into_dimensionality::<Ix4>().unwrap();

        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let per_item: Vec<Array2<F>> = {
            let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
            dx4.outer_iter_mut()
                .into_par_iter()
                .enumerate()
                .map(|(bi, mut dxb)| {
                    let gmat = g4
                        .index_axis(Axis(0), bi)
                        .into_shape_with_order((oc, oh * ow))
                        .unwrap();
                    // d(col) = w2^T . g
                    let mut dcol = Array2::<F>::zeros((ckk, oh * ow));
                    general_mat_mul(F::one(), &w2.t(), &gmat, F::zero(), &mut dcol);
                    col2im(&dcol, self.k, &self.cfg, &mut dxb);
                    // dW_b = g . col^T
                    let mut col = Array2::<F>::zeros((ckk, oh * ow));
                    im2col(&x4.index_axis(Axis(0), bi), self.k, &self.cfg, &mut col);
                    let mut dwb = Array2::<F>::zeros((oc, ckk));
                    general_mat_mul(F::one(), &gmat, &col.t(), F::zero(), &mut dwb);
                    dwb
                })
                .collect()
        };
        let mut dw = Array2::<F>::zeros((oc, ckk));
        for dwb in per_item {
            dw += &dwb;
        }
        let dw = dw
            .into_shape_with_order(w.shape())
            .unwrap();

        let mut grads = vec![Some(dx), Some(dw)];
        if self.has_bias {
            let mut db = ndarray::Array1::<F>::zeros(oc);
            for bi in 0..b {
                for c in 0..oc {
                    db[c] += g4.index_axis(Axis(0), bi).index_axis(Axis(0), c).sum();
                }
            }
            grads.push(Some(db.into_dyn()));
        }
        grads
    }
}

struct ConvT2dBack {
    stride: usize,
    pad: usize,
    k: usize,
    has_bias: bool,
}

/// dcols[(oc*K+kh)*K+kw, iy*IW+ix] = dout[oc, iy*s+kh-p, ix*s+kw-p]
fn gather_t<F: Scalar>(dout: &ArrayView3<F>, k: usize, stride: usize, pad: usize, ih: usize, iw: usize, dcols: &mut Array2<F>) {
    let (oc, oh, ow) = (dout.shape()[0], dout.shape()[1], dout.shape()[2]);
    let ds = dout.as_slice().unwrap();
    let cs = dcols.as_slice_mut().unwrap();
    let (s, p) = (stride as isize, pad as isize);
    for c in 0..oc {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let base = row * ih * iw;
                for iy in 0..ih {
                    let oy = iy as isize * s + kh as isize - p;
                    let dst = &mut cs[base + iy * iw..base + (iy + 1) * iw];
                    if oy < 0 || oy >= oh as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src_row = (c * oh + oy as usize) * ow;
                    for ix in 0..iw {
                        let ox = ix as isize * s + kw as isize - p;
                        dst[ix] = if ox < 0 || ox >= ow as isize {
                            F::zero()
                        } else {
                            ds[src_row + ox as usize]
                        };
                    }
                }
            }
        }
    }
}

/// out[oc, iy*s+kh-p, ix*s+kw-p] += cols[(oc*K+kh)*K+kw, iy*IW+ix]
fn scatter_t<F: Scalar>(
    cols: &Array2<F>,
    k: usize,
    stride: usize,
    pad: usize,
    ih: usize,
    iw: usize,
    out: &mut ArrayViewMut3<F>,
) {
    let (oc, oh, ow) = (out.shape()[0], out.shape()[1], out.shape()[2]);
    let os = out.as_slice_mut().unwrap();
    let cs = cols.as_slice().unwrap();
    debug_assert_eq!(cols.shape(), &[oc * k * k, ih * iw]);
    let (s, p) = (stride as isize, pad as isize);
    for c in 0..oc {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let base = row * ih * iw;
                for iy in 0..ih {
                    let oy = iy as isize * s + kh as isize - p;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    let dst_row = (c * oh + oy as usize) * ow;
                    let src = &cs[base + iy * iw..base + (iy + 1) * iw];
                    for ix in 0..iw {
                        let ox = ix as isize * s + kw as isize - p;
                        if ox >= 0 && ox < ow as isize {
                            os[dst_row + ox as usize] += src[ix];
                        }
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Backward<F> for ConvT2dBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _out: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let w = inputs[1]; // (IC, OC, K, K)
        let (b, ic) = (x.shape()[0], x.shape()[1]);
        let (ih, iw) = (x.shape()[2], x.shape()[3]);
        let oc = w.shape()[1];
        let ockk = oc * self.k * self.k;
        let w2 = weight_mat(w); // (IC, OC*K*K)

        let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
        let g4 = g.view().into_dimensionality::<Ix4>().unwrap();

        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let per_item: Vec<Array2<F>> = {
            let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
            dx4.outer_iter_mut()
                .into_par_iter()
                .enumerate()
                .map(|(bi, mut dxb)| {
                    let mut dcols = Array2::<F>::zeros((ockk, ih * iw));
                    gather_t(&g4.index_axis(Axis(0), bi), self.k, self.stride, self.pad, ih, iw, &mut dcols);
                    let mut dxm = dxb.view_mut().into_shape_with_order((ic, ih * iw)).unwrap();
                    general_mat_mul(F::one(), &w2, &dcols, F::zero(), &mut dxm);
                    let xm = x4
                        .index_axis(Axis(0), bi)
                        .into_shape_with_order((ic, ih * iw))
                        .unwrap();
                    let mut dwb = Array2::<F>::zeros((ic, ockk));
                    general_mat_mul(F::one(), &xm, &dcols.t(), F::zero(), &mut dwb);
                    dwb
                })
                .collect()
        };
        let mut dw = Array2::<F>::zeros((ic, ockk));
        for dwb in per_item {
            dw += &dwb;
        }
        let dw = dw
            .into_shape_with_order(w.shape())
            .unwrap();

        let mut grads = vec![Some(dx), Some(dw)];
        if self.has_bias {
            let mut db = ndarray::Array1::<F>::zeros(oc);
            for bi in 0..b {
                for c in 0..oc {
                    db[c] += g4.index_axis(Axis(0), bi).index_axis(Axis(0), c).sum();
                }
            }
            grads.push(Some(db.into_dyn()));
        }
        grads
    }
}

impl<F: Scalar> Graph<F> {
    /// 2-D convolution, NCHW; weight (OC, IC, K, K), square kernel.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>, cfg: Conv2dCfg) -> NodeId {
        let out = {
            let xv = &self.nodes[x].value;
            let wv = &self.nodes[w].value;
            let k = wv.shape()[2];
            assert_eq!(wv.shape()[3], k, "kernel must be square");
            assert_eq!(xv.shape()[1], wv.shape()[1], "conv2d channel mismatch");
            let (b, _c_in, h, wdt) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
            let oc = wv.shape()[0];
            let (oh, ow) = (cfg.out_dim(h, k), cfg.out_dim(wdt, k));
            let ckk = wv.shape()[1] * k * k;
            let w2 = weight_mat(wv);
            let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();

            let mut out = ArrayD::<F>::zeros(vec![b, oc, oh, ow]);
            {
                let mut out4 = out.view_mut().into_dimensionality::<Ix4>().unwrap();
                out4.outer_iter_mut()
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(bi, mut ob)| {
                        let mut col = Array2::<F>::zeros((ckk, oh * ow));
                        im2col(&x4.index_axis(Axis(0), bi), k, &cfg, &mut col);
                        let mut om = ob.view_mut().into_shape_with_order((oc, oh * ow)).unwrap();
                        general_mat_mul(F::one(), &w2, &col, F::zero(), &mut om);
                    });
            }
            if let Some(bid) = bias {
                let bslice = self.nodes[bid].value.as_slice().unwrap();
                let os = out.as_slice_mut().unwrap();
                for bi in 0..b {
                    for c in 0..oc {
                        let start = (bi * oc + c) * oh * ow;
                        let add = bslice[c];
                        for v in &mut os[start..start + oh * ow] {
                            *v += add;
                        }
                    }
                }
            }
            out
        };
        let k = self.nodes[w].value.shape()[2];
        let mut parents = vec![x, w];
        if let Some(bid) = bias {
            parents.push(bid);
        }
        self.push(out, parents, Box::new(Conv2dBack { cfg, k, has_bias: bias.is_some() }))
    }

    /// Transposed 2-D convolution; weight (IC, OC, K, K).
    /// Output spatial size: (in-1)*stride - 2*pad + k.
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>, stride: usize, pad: usize) -> NodeId {
        let out = {
            let xv = &self.nodes[x].value;
            let wv = &self.nodes[w].value;
            let k = wv.shape()[2];
            assert_eq!(wv.shape()[3], k);
            assert_eq!(xv.shape()[1], wv.shape()[0], "conv_transpose2d channel mismatch");
            let (b, ic) = (xv.shape()[0], xv.shape()[1]);
            let (ih, iw) = (xv.shape()[2], xv.shape()[3]);
            let oc = wv.shape()[1];
            let oh = (ih - 1) * stride + k - 2 * pad;
            let ow = (iw - 1) * stride + k - 2 * pad;
            let ockk = oc * k * k;
            let w2 = weight_mat(wv); // (IC, OC*K*K)
            let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();

            let mut out = ArrayD::<F>::zeros(vec![b, oc, oh, ow]);
            {
                let mut out4 = out.view_mut().into_dimensionality::<Ix4>().unwrap();
                out4.outer_iter_mut()
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(bi, mut ob)| {
                        let xm = x4
                            .index_axis(Axis(0), bi)
                            .into_shape_with_order((ic, ih * iw))
                            .unwrap();
                        let mut cols = Array2::<F>::zeros((ockk, ih * iw));
                        general_mat_mul(F::one(), &w2.t(), &xm, F::zero(), &mut cols);
                        scatter_t(&cols, k, stride, pad, ih, iw, &mut ob);
                    });
            }
            if let Some(bid) = bias {
                let bslice = self.nodes[bid].value.as_slice().unwrap();
                let os = out.as_slice_mut().unwrap();
                for bi in 0..b {
                    for c in 0..oc {
                        let start = (bi * oc + c) * oh * ow;
                        let add = bslice[c];
                        for v in &mut os[start..start + oh * ow] {
                            *v += add;
                        }
                    }
                }
            }
            out
        };
        let k = self.nodes[w].value.shape()[2];
        let mut parents = vec![x, w];
        if let Some(bid) = bias {
            parents.push(bid);
        }
        self.push(
            out,
            parents,
            Box::new(ConvT2dBack { stride, pad, k, has_bias: bias.is_some() }),
        )
    }
}
