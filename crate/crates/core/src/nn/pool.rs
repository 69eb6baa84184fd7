//! Pooling and bilinear resampling ops.

use crate::float::Scalar;
use ndarray::{ArrayD, Ix4};

use super::{Backward, Graph, NodeId};

struct MaxPoolBack {
    /// flat input index (within the H*W plane) of each output element
    argmax: Vec<u32>,
}

impl<F: Scalar> Backward<F> for MaxPoolBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let hw = x.shape()[2] * x.shape()[3];
        let (oh, ow) = (g.shape()[2], g.shape()[3]);
        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        let gs = g.as_slice().unwrap();
        for plane in 0..b * c {
            let gbase = plane * oh * ow;
            let xbase = plane * hw;
            for i in 0..oh * ow {
                let src = self.argmax[gbase + i] as usize;
                dxs[xbase + src] += gs[gbase + i];
            }
        }
        vec![Some(dx)]
    }
}

struct AvgAxisBack {
    axis: usize, // 2 or 3, or usize::MAX for global (both)
}

impl<F: Scalar> Backward<F> for AvgAxisBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let n: usize = if self.axis == usize::MAX {
            x.shape()[2] * x.shape()[3]
        } else {
            x.shape()[self.axis]
        };
        let scale = F::one() / F::from_usize(n);
        let gb = g.broadcast(x.raw_dim()).unwrap().to_owned();
        vec![Some(gb * scale)]
    }
}

struct BilinearBack {
    in_h: usize,
    in_w: usize,
}

fn lerp_table(out_dim: usize, in_dim: usize) -> Vec<(usize, usize, f64)> {
    // half-pixel-center mapping (align_corners = false)
    let scale = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let floor = src.floor();
            let t = (src - floor).clamp(0.0, 1.0);
            let i0 = (floor.max(0.0) as usize).min(in_dim - 1);
            let i1 = (i0 + 1).min(in_dim - 1);
            let t = if floor < 0.0 { 0.0 } else { t };
            (i0, i1, t)
        })
        .collect()
}

impl<F: Scalar> Backward<F> for BilinearBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let (oh, ow) = (g.shape()[2], g.shape()[3]);
        let ys = lerp_table(oh, self.in_h);
        let xs = lerp_table(ow, self.in_w);
        let mut dx = ArrayD::<F>::zeros(x.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        let gs = g.as_slice().unwrap();
        let (ih, iw) = (self.in_h, self.in_w);
        for plane in 0..b * c {
            let gbase = plane * oh * ow;
            let xbase = plane * ih * iw;
            for oy in 0..oh {
                let (y0, y1, ty) = ys[oy];
                for ox in 0..ow {
                    let (x0, x1, tx) = xs[ox];
                    let gv = gs[gbase + oy * ow + ox].to_f64_();
                    dxs[xbase + y0 * iw + x0] += F::from_f64(gv * (1.0 - ty) * (1.0 - tx));
                    dxs[xbase + y0 * iw + x1] += F::from_f64(gv * (1.0 - ty) * tx);
                    dxs[xbase + y1 * iw + x0] += F::from_f64(gv * ty * (1.0 - tx));
                    dxs[xbase + y1 * iw + x1] += F::from_f64(gv * ty * tx);
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Plain-array bilinear resize of one (H, W) plane; shared by the graph op and
/// by heatmap post-processing.
pub fn resize_plane<F: Scalar>(src: &[F], ih: usize, iw: usize, oh: usize, ow: usize, dst: &mut [F]) {
    let ys = lerp_table(oh, ih);
    let xs = lerp_table(ow, iw);
    for oy in 0..oh {
        let (y0, y1, ty) = ys[oy];
        for ox in 0..ow {
            let (x0, x1, tx) = xs[ox];
            let v00 = src[y0 * iw + x0].to_f64_();
            let v01 = src[y0 * iw + x1].to_f64_();
            let v10 = src[y1 * iw + x0].to_f64_();
            let v11 = src[y1 * iw + x1].to_f64_();
            let top = v00 * (1.0 - tx) + v01 * tx;
            let bot = v10 * (1.0 - tx) + v11 * tx;
            dst[oy * ow + ox] = F::from_f64(top * (1.0 - ty) + bot * ty);
        }
    }
}

impl<F: Scalar> Graph<F> {
    /// Max pooling with square window `k` and stride `s`, no padding.
    pub fn max_pool2d(&mut self, x: NodeId, k: usize, s: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        let (b, c, h, w) = {
            let v = xv.view().into_dimensionality::<Ix4>().unwrap();
            (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3])
        };
        let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
        let xs = xv.as_slice().unwrap();
        let mut out = ArrayD::<F>::zeros(vec![b, c, oh, ow]);
        let os = out.as_slice_mut().unwrap();
        let mut argmax = vec![0u32; b * c * oh * ow];
        for plane in 0..b * c {
            let xbase = plane * h * w;
            let obase = plane * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        let iy = oy * s + ky;
                        for kx in 0..k {
                            let ix = ox * s + kx;
                            let v = xs[xbase + iy * w + ix];
                            if v > best {
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    }
                    os[obase + oy * ow + ox] = best;
                    argmax[obase + oy * ow + ox] = best_idx as u32;
                }
            }
        }
        self.push(out, vec![x], Box::new(MaxPoolBack { argmax }))
    }

    /// Global average pool to (B, C, 1, 1).
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let scale = F::one() / F::from_usize(h * w);
        let mut out = ArrayD::<F>::zeros(vec![b, c, 1, 1]);
        let xs = xv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for plane in 0..b * c {
            let mut acc = F::zero();
            for v in &xs[plane * h * w..(plane + 1) * h * w] {
                acc += *v;
            }
            os[plane] = acc * scale;
        }
        self.push(out, vec![x], Box::new(AvgAxisBack { axis: usize::MAX }))
    }

    /// Mean over one spatial axis (2 = height, 3 = width), keeping the dim.
    pub fn avg_over_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        assert!(axis == 2 || axis == 3);
        let xv = &self.nodes[x].value;
        let n = F::from_usize(xv.shape()[axis]);
        let y = (xv.sum_axis(ndarray::Axis(axis)) / n).insert_axis(ndarray::Axis(axis));
        self.push(y, vec![x], Box::new(AvgAxisBack { axis }))
    }

    /// Bilinear resize to (oh, ow), half-pixel centers.
    pub fn upsample_bilinear(&mut self, x: NodeId, oh: usize, ow: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if h == oh && w == ow {
            // matched sizes: identity (used by block4 -> block2 alignment)
            let y = xv.clone();
            return self.push(y, vec![x], Box::new(IdentityBack));
        }
        let mut out = ArrayD::<F>::zeros(vec![b, c, oh, ow]);
        let xs = xv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for plane in 0..b * c {
            resize_plane(
                &xs[plane * h * w..(plane + 1) * h * w],
                h,
                w,
                oh,
                ow,
                &mut os[plane * oh * ow..(plane + 1) * oh * ow],
            );
        }
        self.push(out, vec![x], Box::new(BilinearBack { in_h: h, in_w: w }))
    }
}

struct IdentityBack;
impl<F: Scalar> Backward<F> for IdentityBack {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        vec![Some(g.clone())]
    }
}
