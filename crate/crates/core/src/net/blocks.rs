//! Reusable network blocks: conv+bn+relu, coordinate attention, squeeze-
//! excitation, atrous spatial pyramid pooling, and residual stages.
//!
//! Blocks are pure descriptions: construction assembles parameter names and
//! shapes into a [`ParamReg`]; `forward` pulls them from a store by name, so
//! the online and momentum networks share one code path.

use crate::float::Scalar;
use crate::nn::conv::Conv2dCfg;
use crate::nn::params::he_normal;
use crate::nn::{Graph, NodeId, ParamKind, ParamStore};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    HeNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub init: Init,
}

/// Ordered parameter registry; the single source of truth for store layout.
#[derive(Debug, Clone, Default)]
pub struct ParamReg {
    pub specs: Vec<ParamSpec>,
}

impl ParamReg {
    pub fn add(&mut self, name: &str, shape: Vec<usize>, kind: ParamKind, init: Init) {
        self.specs.push(ParamSpec { name: name.to_string(), shape, kind, init });
    }

    pub fn build<F: Scalar>(&self, rng: &mut ChaCha8Rng) -> ParamStore<F> {
        let mut store = ParamStore::new();
        for s in &self.specs {
            let value: ArrayD<F> = match s.init {
                Init::HeNormal => he_normal(&s.shape, rng),
                Init::Zeros => ArrayD::zeros(s.shape.clone()),
                Init::Ones => ArrayD::ones(s.shape.clone()),
            };
            store.insert(&s.name, value, s.kind);
        }
        store
    }

    pub fn num_elements(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Trainable (non-buffer) elements.
    pub fn num_trainable(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| s.kind != ParamKind::Buffer)
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// Shared forward context: parameter store + whether leaves require grad.
pub struct ParamCtx<'a, F: Scalar> {
    pub store: &'a ParamStore<F>,
    pub trainable: bool,
}

impl<'a, F: Scalar> ParamCtx<'a, F> {
    pub fn new(store: &'a ParamStore<F>, trainable: bool) -> Self {
        ParamCtx { store, trainable }
    }

    pub fn load(&self, g: &mut Graph<F>, name: &str) -> NodeId {
        g.param(self.store, name, self.trainable)
    }
}

// -- conv (+ optional bias) --------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub name: String,
    pub ic: usize,
    pub oc: usize,
    pub k: usize,
    pub cfg: Conv2dCfg,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(reg: &mut ParamReg, name: &str, ic: usize, oc: usize, k: usize, cfg: Conv2dCfg, bias: bool) -> Self {
        reg.add(&format!("{name}.w"), vec![oc, ic, k, k], ParamKind::Weight, Init::HeNormal);
        if bias {
            reg.add(&format!("{name}.b"), vec![oc], ParamKind::BiasOrNorm, Init::Zeros);
        }
        ConvSpec { name: name.to_string(), ic, oc, k, cfg, bias }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let w = ctx.load(g, &format!("{}.w", self.name));
        let b = self.bias.then(|| ctx.load(g, &format!("{}.b", self.name)));
        g.conv2d(x, w, b, self.cfg)
    }
}

/// Transposed conv (weight (IC, OC, K, K)).
#[derive(Debug, Clone)]
pub struct ConvTSpec {
    pub name: String,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl ConvTSpec {
    pub fn new(reg: &mut ParamReg, name: &str, ic: usize, oc: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Self {
        reg.add(&format!("{name}.w"), vec![ic, oc, k, k], ParamKind::Weight, Init::HeNormal);
        if bias {
            reg.add(&format!("{name}.b"), vec![oc], ParamKind::BiasOrNorm, Init::Zeros);
        }
        ConvTSpec { name: name.to_string(), stride, pad, bias }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let w = ctx.load(g, &format!("{}.w", self.name));
        let b = self.bias.then(|| ctx.load(g, &format!("{}.b", self.name)));
        g.conv_transpose2d(x, w, b, self.stride, self.pad)
    }
}

// -- batch norm ---------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BnSpec {
    pub name: String,
}

impl BnSpec {
    pub fn new(reg: &mut ParamReg, name: &str, c: usize) -> Self {
        reg.add(&format!("{name}.gamma"), vec![c], ParamKind::BiasOrNorm, Init::Ones);
        reg.add(&format!("{name}.beta"), vec![c], ParamKind::BiasOrNorm, Init::Zeros);
        reg.add(&format!("{name}.running_mean"), vec![c], ParamKind::Buffer, Init::Zeros);
        reg.add(&format!("{name}.running_var"), vec![c], ParamKind::Buffer, Init::Ones);
        BnSpec { name: name.to_string() }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let gamma = ctx.load(g, &format!("{}.gamma", self.name));
        let beta = ctx.load(g, &format!("{}.beta", self.name));
        let rm = ctx.store.get(&format!("{}.running_mean", self.name)).unwrap();
        let rv = ctx.store.get(&format!("{}.running_var", self.name)).unwrap();
        g.batch_norm(x, gamma, beta, (rm, rv), &self.name)
    }
}

/// conv -> batch norm -> ReLU
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: ConvSpec,
    pub bn: BnSpec,
}

impl ConvBlock {
    pub fn new(reg: &mut ParamReg, name: &str, ic: usize, oc: usize, k: usize, cfg: Conv2dCfg) -> Self {
        ConvBlock {
            conv: ConvSpec::new(reg, &format!("{name}.conv"), ic, oc, k, cfg, false),
            bn: BnSpec::new(reg, &format!("{name}.bn"), oc),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let y = self.conv.forward(g, ctx, x);
        let y = self.bn.forward(g, ctx, y);
        g.relu(y)
    }
}

// -- coordinate attention ------------------------------------------------------

/// Direction-aware channel attention: height- and width-pooled descriptors go
/// through a shared bottleneck, then produce per-direction sigmoid gates.
#[derive(Debug, Clone)]
pub struct CoordAttention {
    pub channels: usize,
    reduce: ConvSpec,
    reduce_bn: BnSpec,
    gate_h: ConvSpec,
    gate_w: ConvSpec,
}

impl CoordAttention {
    pub fn mid_channels(c: usize, reduction: usize) -> usize {
        (c / reduction).max(8)
    }

    pub fn new(reg: &mut ParamReg, name: &str, c: usize, reduction: usize) -> Self {
        let mid = Self::mid_channels(c, reduction);
        CoordAttention {
            channels: c,
            reduce: ConvSpec::new(reg, &format!("{name}.reduce"), c, mid, 1, Conv2dCfg::default(), false),
            reduce_bn: BnSpec::new(reg, &format!("{name}.reduce_bn"), mid),
            gate_h: ConvSpec::new(reg, &format!("{name}.gate_h"), mid, c, 1, Conv2dCfg::default(), true),
            gate_w: ConvSpec::new(reg, &format!("{name}.gate_w"), mid, c, 1, Conv2dCfg::default(), true),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let (h, w) = {
            let v = g.value(x);
            (v.shape()[2], v.shape()[3])
        };
        // pool along width -> (B,C,H,1); along height -> (B,C,1,W) -> (B,C,W,1)
        let xh = g.avg_over_axis(x, 3);
        let xw = g.avg_over_axis(x, 2);
        let xw_t = g.transpose_hw(xw);
        let joint = g.concat(2, &[xh, xw_t]); // (B,C,H+W,1)
        let mid = self.reduce.forward(g, ctx, joint);
        let mid = self.reduce_bn.forward(g, ctx, mid);
        let mid = g.relu(mid);
        let part_h = g.slice_axis(mid, 2, 0, h);
        let part_w = g.slice_axis(mid, 2, h, w);
        let part_w = g.transpose_hw(part_w); // (B,mid,1,W)
        let ah = self.gate_h.forward(g, ctx, part_h);
        let ah = g.sigmoid(ah); // (B,C,H,1)
        let aw = self.gate_w.forward(g, ctx, part_w);
        let aw = g.sigmoid(aw); // (B,C,1,W)
        let gated = g.mul_gate(x, ah);
        g.mul_gate(gated, aw)
    }
}

// -- squeeze-excitation ---------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SeBlock {
    squeeze: ConvSpec,
    excite: ConvSpec,
}

impl SeBlock {
    pub fn new(reg: &mut ParamReg, name: &str, c: usize, reduction: usize) -> Self {
        let mid = (c / reduction).max(4);
        SeBlock {
            squeeze: ConvSpec::new(reg, &format!("{name}.squeeze"), c, mid, 1, Conv2dCfg::default(), true),
            excite: ConvSpec::new(reg, &format!("{name}.excite"), mid, c, 1, Conv2dCfg::default(), true),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let pooled = g.global_avg_pool(x);
        let mid = self.squeeze.forward(g, ctx, pooled);
        let mid = g.relu(mid);
        let gates = self.excite.forward(g, ctx, mid);
        let gates = g.sigmoid(gates); // (B,C,1,1)
        g.mul_gate(x, gates)
    }
}

// -- ASPP -------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Aspp {
    pub rates: Vec<usize>,
    one: ConvBlock,
    dilated: Vec<ConvBlock>,
    pool_conv: ConvBlock,
    project: ConvBlock,
}

impl Aspp {
    pub fn new(reg: &mut ParamReg, name: &str, ic: usize, branch: usize, out: usize, rates: &[usize]) -> Self {
        let dilated = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                ConvBlock::new(
                    reg,
                    &format!("{name}.rate{i}"),
                    ic,
                    branch,
                    3,
                    Conv2dCfg { stride: 1, pad: r, dilation: r },
                )
            })
            .collect();
        let n_branches = rates.len() + 2;
        Aspp {
            rates: rates.to_vec(),
            one: ConvBlock::new(reg, &format!("{name}.one"), ic, branch, 1, Conv2dCfg::default()),
            dilated,
            pool_conv: ConvBlock::new(reg, &format!("{name}.pool"), ic, branch, 1, Conv2dCfg::default()),
            project: ConvBlock::new(reg, &format!("{name}.project"), branch * n_branches, out, 1, Conv2dCfg::default()),
        }
    }

    /// Effective rates after clamping to the spatial extent; a rate whose
    /// dilated kernel no longer fits is degenerate and gets reduced.
    pub fn clamped_rates(&self, extent: usize) -> Vec<usize> {
        let cap = ((extent.saturating_sub(1)) / 2).max(1);
        self.rates.iter().map(|&r| r.min(cap)).collect()
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let (h, w) = {
            let v = g.value(x);
            (v.shape()[2], v.shape()[3])
        };
        let eff = self.clamped_rates(h.min(w));
        let mut parts = vec![self.one.forward(g, ctx, x)];
        for (cb, (&orig, &r)) in self.dilated.iter().zip(self.rates.iter().zip(eff.iter())) {
            let mut spec = cb.clone();
            if r != orig {
                spec.conv.cfg = Conv2dCfg { stride: 1, pad: r, dilation: r };
            }
            parts.push(spec.forward(g, ctx, x));
        }
        let pooled = g.global_avg_pool(x);
        let pooled = self.pool_conv.forward(g, ctx, pooled);
        let pooled = g.upsample_bilinear(pooled, h, w);
        parts.push(pooled);
        let cat = g.concat(1, &parts);
        self.project.forward(g, ctx, cat)
    }
}

// -- residual stages -----------------------------------------------------------

#[derive(Debug, Clone)]
struct ResidualUnit {
    convs: Vec<(ConvSpec, BnSpec)>,
    shortcut: Option<(ConvSpec, BnSpec)>,
}

/// A stack of residual units. `bottleneck` selects 1x1-3x3-1x1 units with a
/// 4x expansion (deep preset) over plain 3x3-3x3 units (small preset).
/// Striding happens in the first unit; `dilation` applies to the 3x3 convs.
#[derive(Debug, Clone)]
pub struct ResidualStage {
    units: Vec<ResidualUnit>,
}

impl ResidualStage {
    pub fn new(
        reg: &mut ParamReg,
        name: &str,
        ic: usize,
        oc: usize,
        units: usize,
        stride: usize,
        dilation: usize,
        bottleneck: bool,
    ) -> Self {
        let mut list = Vec::with_capacity(units);
        for u in 0..units {
            let uin = if u == 0 { ic } else { oc };
            let ustride = if u == 0 { stride } else { 1 };
            let base = format!("{name}.u{u}");
            let convs = if bottleneck {
                let midc = (oc / 4).max(1);
                vec![
                    (
                        ConvSpec::new(reg, &format!("{base}.c0"), uin, midc, 1, Conv2dCfg { stride: ustride, pad: 0, dilation: 1 }, false),
                        BnSpec::new(reg, &format!("{base}.bn0"), midc),
                    ),
                    (
                        ConvSpec::new(reg, &format!("{base}.c1"), midc, midc, 3, Conv2dCfg { stride: 1, pad: dilation, dilation }, false),
                        BnSpec::new(reg, &format!("{base}.bn1"), midc),
                    ),
                    (
                        ConvSpec::new(reg, &format!("{base}.c2"), midc, oc, 1, Conv2dCfg::default(), false),
                        BnSpec::new(reg, &format!("{base}.bn2"), oc),
                    ),
                ]
            } else {
                vec![
                    (
                        ConvSpec::new(reg, &format!("{base}.c0"), uin, oc, 3, Conv2dCfg { stride: ustride, pad: dilation, dilation }, false),
                        BnSpec::new(reg, &format!("{base}.bn0"), oc),
                    ),
                    (
                        ConvSpec::new(reg, &format!("{base}.c1"), oc, oc, 3, Conv2dCfg { stride: 1, pad: dilation, dilation }, false),
                        BnSpec::new(reg, &format!("{base}.bn1"), oc),
                    ),
                ]
            };
            let shortcut = if uin != oc || ustride != 1 {
                Some((
                    ConvSpec::new(reg, &format!("{base}.sc"), uin, oc, 1, Conv2dCfg { stride: ustride, pad: 0, dilation: 1 }, false),
                    BnSpec::new(reg, &format!("{base}.sc_bn"), oc),
                ))
            } else {
                None
            };
            list.push(ResidualUnit { convs, shortcut });
        }
        ResidualStage { units: list }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> NodeId {
        let mut cur = x;
        for unit in &self.units {
            let identity = match &unit.shortcut {
                Some((conv, bn)) => {
                    let s = conv.forward(g, ctx, cur);
                    bn.forward(g, ctx, s)
                }
                None => cur,
            };
            let mut y = cur;
            for (i, (conv, bn)) in unit.convs.iter().enumerate() {
                y = conv.forward(g, ctx, y);
                y = bn.forward(g, ctx, y);
                if i + 1 < unit.convs.len() {
                    y = g.relu(y);
                }
            }
            let sum = g.add(y, identity);
            cur = g.relu(sum);
        }
        cur
    }
}
