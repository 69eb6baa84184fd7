//! The encoder-decoder: dual-branch heterogeneous feature extraction with
//! coordinate attention (HFE), a dilated residual backbone with SE weighting
//! and atrous pyramid pooling (MAFE), a unit-norm projection head, and a
//! transposed-convolution decoder.
//!
//! Net output stride is 8: the encoder grid is (H/8, W/8) for any input with
//! H, W multiples of 8. The HFE contributes `hfe_stride`, the backbone the
//! rest (its stem max-pools only when the HFE runs at full resolution).

pub mod blocks;

use crate::error::{CoreError, Result};
use crate::float::Scalar;
use crate::nn::conv::Conv2dCfg;
use crate::nn::{Graph, NodeId, ParamStore};
use crate::rng;

use blocks::{Aspp, ConvBlock, ConvSpec, ConvTSpec, CoordAttention, ParamCtx, ParamReg, SeBlock};
use blocks::{BnSpec, ResidualStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneDepth {
    Small,
    Resnet101Like,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_size: (usize, usize),
    /// output widths of the two conv blocks in each HFE branch
    pub hfe_channels: (usize, usize),
    pub backbone_depth: BackboneDepth,
    pub aspp_rates: Vec<usize>,
    pub ca_reduction: usize,
    pub se_reduction: usize,
    pub encoder_out_channels: usize,
    pub projection_dim: usize,
    pub num_classes: usize,
    /// stride of the fused HFE output (1 = full resolution, 2 = half)
    pub hfe_stride: usize,
    /// HFE fusion conv output width
    pub fusion_channels: usize,
    /// backbone stage output widths
    pub stage_channels: [usize; 4],
    /// residual units per stage
    pub stage_units: [usize; 4],
    /// per-branch ASPP width
    pub aspp_channels: usize,
    /// decoder widths: (reduce, up1, up2)
    pub decoder_channels: (usize, usize, usize),
}

impl Default for NetworkConfig {
    /// Desk-scale defaults: paper-shaped interfaces (stride-8 encoder grid,
    /// 256-channel encoder output, 128-d projection) on a small backbone
    /// that trains on CPU.
    fn default() -> Self {
        NetworkConfig {
            input_size: (512, 512),
            hfe_channels: (32, 64),
            backbone_depth: BackboneDepth::Small,
            aspp_rates: vec![6, 12, 18],
            ca_reduction: 32,
            se_reduction: 16,
            encoder_out_channels: 256,
            projection_dim: 128,
            num_classes: 2,
            hfe_stride: 2,
            fusion_channels: 64,
            stage_channels: [32, 64, 96, 128],
            stage_units: [2, 2, 2, 2],
            aspp_channels: 128,
            decoder_channels: (96, 48, 24),
        }
    }
}

impl NetworkConfig {
    /// The compact preset used by probes and acceptance runs: narrower
    /// branches everywhere, same stride-8 / 256-channel / 128-d interfaces.
    pub fn small(input: usize) -> Self {
        NetworkConfig {
            input_size: (input, input),
            hfe_channels: (16, 32),
            fusion_channels: 48,
            stage_channels: [32, 48, 64, 96],
            aspp_channels: 64,
            decoder_channels: (64, 32, 16),
            ..Default::default()
        }
    }

    /// Deep bottleneck preset mirroring the 101-layer lineage: [3,4,23,3]
    /// units, full-resolution HFE, 256-wide ASPP branches.
    pub fn resnet101_like(input: usize) -> Self {
        NetworkConfig {
            input_size: (input, input),
            backbone_depth: BackboneDepth::Resnet101Like,
            hfe_stride: 1,
            stage_channels: [256, 512, 1024, 2048],
            stage_units: [3, 4, 23, 3],
            aspp_channels: 256,
            decoder_channels: (256, 128, 64),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "input size {h}x{w} must be a multiple of 8"
            )));
        }
        if !(self.hfe_stride == 1 || self.hfe_stride == 2) {
            return Err(CoreError::InvalidConfig("hfe_stride must be 1 or 2".into()));
        }
        if self.num_classes != 2 {
            return Err(CoreError::InvalidConfig("two-class score maps only".into()));
        }
        Ok(())
    }

    /// Non-fatal configuration notes (e.g. ASPP rates degenerate at this
    /// input size); the caller decides where to print them.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let extent = self.input_size.0.min(self.input_size.1) / 8;
        let cap = ((extent.saturating_sub(1)) / 2).max(1);
        for &r in &self.aspp_rates {
            if r > cap {
                out.push(format!(
                    "aspp rate {r} exceeds the {extent}-px encoder grid; clamped to {cap}"
                ));
            }
        }
        out
    }
}

struct HfeBranch {
    cb1: ConvBlock,
    cb2: ConvBlock,
}

impl HfeBranch {
    fn new(reg: &mut ParamReg, name: &str, ic: usize, c: (usize, usize), stride: usize) -> Self {
        HfeBranch {
            cb1: ConvBlock::new(reg, &format!("{name}.cb1"), ic, c.0, 3, Conv2dCfg { stride, pad: 1, dilation: 1 }),
            cb2: ConvBlock::new(reg, &format!("{name}.cb2"), c.0, c.1, 3, Conv2dCfg::same_3x3()),
        }
    }

    /// Returns (first conv block maps, second conv block maps after pooling).
    fn forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, x: NodeId) -> (NodeId, NodeId) {
        let f1 = self.cb1.forward(g, ctx, x);
        let pooled = g.max_pool2d(f1, 2, 2);
        let f2 = self.cb2.forward(g, ctx, pooled);
        (f1, f2)
    }
}

struct Hfe {
    optical: HfeBranch,
    elevation: HfeBranch,
    ca: CoordAttention,
    fusion: ConvBlock,
}

struct Mafe {
    stem: ConvBlock,
    stem_pool: bool,
    stages: [ResidualStage; 4],
    se: SeBlock,
    aspp: Aspp,
}

struct Decoder {
    reduce: ConvBlock,
    up1: ConvTSpec,
    up1_bn: BnSpec,
    up2: ConvTSpec,
    up2_bn: BnSpec,
    classify: ConvSpec,
}

/// Activations exposed by a forward pass, for losses, sampling, Grad-CAM,
/// and the decoder skip path.
pub struct NetTaps {
    pub fused: NodeId,
    pub block1: NodeId,
    pub block2: NodeId,
    pub block3: NodeId,
    pub block4: NodeId,
    pub encoder_out: NodeId,
    /// unit-norm (B, D, H/8, W/8)
    pub projection: NodeId,
    /// (B, 2, H, W)
    pub score_map: NodeId,
}

impl NetTaps {
    pub const LAYER_NAMES: [&'static str; 8] = [
        "hfe.fused",
        "mafe.block1",
        "mafe.block2",
        "mafe.block3",
        "mafe.block4",
        "encoder.out",
        "projection",
        "decoder.score",
    ];

    pub fn by_name(&self, name: &str) -> Option<NodeId> {
        match name {
            "hfe.fused" => Some(self.fused),
            "mafe.block1" => Some(self.block1),
            "mafe.block2" => Some(self.block2),
            "mafe.block3" => Some(self.block3),
            "mafe.block4" => Some(self.block4),
            "encoder.out" => Some(self.encoder_out),
            "projection" => Some(self.projection),
            "decoder.score" => Some(self.score_map),
            _ => None,
        }
    }
}

pub struct Network {
    pub config: NetworkConfig,
    hfe: Hfe,
    mafe: Mafe,
    projection: ConvSpec,
    decoder: Decoder,
    reg: ParamReg,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = ParamReg::default();
        let (c1, c2) = config.hfe_channels;
        let bottleneck = config.backbone_depth == BackboneDepth::Resnet101Like;
        let sc = config.stage_channels;
        let su = config.stage_units;

        let hfe = Hfe {
            optical: HfeBranch::new(&mut reg, "hfe.opt", 3, (c1, c2), config.hfe_stride),
            elevation: HfeBranch::new(&mut reg, "hfe.dem", 1, (c1, c2), config.hfe_stride),
            ca: CoordAttention::new(&mut reg, "hfe.ca", 2 * c2, config.ca_reduction),
            fusion: ConvBlock::new(
                &mut reg,
                "hfe.fusion",
                2 * c2 + 2 * c1,
                config.fusion_channels,
                3,
                Conv2dCfg::same_3x3(),
            ),
        };

        let stem_pool = config.hfe_stride == 1;
        let mafe = Mafe {
            stem: ConvBlock::new(
                &mut reg,
                "mafe.stem",
                config.fusion_channels,
                sc[0],
                3,
                Conv2dCfg { stride: 2, pad: 1, dilation: 1 },
            ),
            stem_pool,
            stages: [
                ResidualStage::new(&mut reg, "mafe.stage1", sc[0], sc[0], su[0], 1, 1, bottleneck),
                ResidualStage::new(&mut reg, "mafe.stage2", sc[0], sc[1], su[1], 2, 1, bottleneck),
                ResidualStage::new(&mut reg, "mafe.stage3", sc[1], sc[2], su[2], 1, 2, bottleneck),
                ResidualStage::new(&mut reg, "mafe.stage4", sc[2], sc[3], su[3], 1, 4, bottleneck),
            ],
            se: SeBlock::new(&mut reg, "mafe.se", sc[1] + sc[3], config.se_reduction),
            aspp: Aspp::new(
                &mut reg,
                "mafe.aspp",
                sc[1] + sc[3],
                config.aspp_channels,
                config.encoder_out_channels,
                &config.aspp_rates,
            ),
        };

        let projection = ConvSpec::new(
            &mut reg,
            "proj",
            config.encoder_out_channels,
            config.projection_dim,
            1,
            Conv2dCfg::default(),
            true,
        );

        let (d0, d1, d2) = config.decoder_channels;
        let decoder = Decoder {
            reduce: ConvBlock::new(
                &mut reg,
                "dec.reduce",
                config.encoder_out_channels + sc[0],
                d0,
                1,
                Conv2dCfg::default(),
            ),
            up1: ConvTSpec::new(&mut reg, "dec.up1", d0, d1, 4, 2, 1, false),
            up1_bn: BnSpec::new(&mut reg, "dec.up1_bn", d1),
            up2: ConvTSpec::new(&mut reg, "dec.up2", d1, d2, 4, 2, 1, false),
            up2_bn: BnSpec::new(&mut reg, "dec.up2_bn", d2),
            classify: ConvSpec::new(&mut reg, "dec.classify", d2, config.num_classes, 1, Conv2dCfg::default(), true),
        };

        Ok(Network { config, hfe, mafe, projection, decoder, reg })
    }

    /// Initialize a parameter store from the master seed's "init" stream.
    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamStore<F> {
        let mut r = rng::stream(seed, "init");
        self.reg.build(&mut r)
    }

    pub fn param_elements(&self) -> usize {
        self.reg.num_elements()
    }

    pub fn trainable_elements(&self) -> usize {
        self.reg.num_trainable()
    }

    /// Dual-branch feature extraction and fusion (HFE stage only).
    pub fn hfe_forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ctx: &ParamCtx<F>,
        hrsi: NodeId,
        dem: NodeId,
    ) -> NodeId {
        {
            let hv = g.value(hrsi);
            let dv = g.value(dem);
            assert_eq!(
                (hv.shape()[2], hv.shape()[3]),
                (dv.shape()[2], dv.shape()[3]),
                "optical and elevation branches must be spatially aligned"
            );
        }
        let (o1, o2) = self.hfe.optical.forward(g, ctx, hrsi);
        let (d1, d2) = self.hfe.elevation.forward(g, ctx, dem);
        let joint = g.concat(1, &[o2, d2]);
        let weighted = self.hfe.ca.forward(g, ctx, joint);
        let (th, tw) = {
            let v = g.value(o1);
            (v.shape()[2], v.shape()[3])
        };
        let up = g.upsample_bilinear(weighted, th, tw);
        let cat = g.concat(1, &[up, o1, d1]);
        self.hfe.fusion.forward(g, ctx, cat)
    }

    /// Backbone + SE + ASPP. Returns (block1, block2, block3, block4, encoder_out).
    pub fn mafe_forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ctx: &ParamCtx<F>,
        fused: NodeId,
    ) -> (NodeId, NodeId, NodeId, NodeId, NodeId) {
        let mut x = self.mafe.stem.forward(g, ctx, fused);
        if self.mafe.stem_pool {
            x = g.max_pool2d(x, 2, 2);
        }
        let b1 = self.mafe.stages[0].forward(g, ctx, x);
        let b2 = self.mafe.stages[1].forward(g, ctx, b1);
        let b3 = self.mafe.stages[2].forward(g, ctx, b2);
        let b4 = self.mafe.stages[3].forward(g, ctx, b3);
        let (h2, w2) = {
            let v = g.value(b2);
            (v.shape()[2], v.shape()[3])
        };
        let b4_up = g.upsample_bilinear(b4, h2, w2);
        let cat = g.concat(1, &[b2, b4_up]);
        let weighted = self.mafe.se.forward(g, ctx, cat);
        let enc = self.mafe.aspp.forward(g, ctx, weighted);
        (b1, b2, b3, b4, enc)
    }

    /// 1x1 projection to D channels, L2-normalized per pixel.
    pub fn projection_forward<F: Scalar>(&self, g: &mut Graph<F>, ctx: &ParamCtx<F>, enc: NodeId) -> NodeId {
        let y = self.projection.forward(g, ctx, enc);
        g.l2_normalize_channels(y)
    }

    /// Decoder: skip-concat with block1, two transposed-conv doublings, and
    /// the two-class score head at input resolution.
    pub fn decoder_forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ctx: &ParamCtx<F>,
        encoder_out: NodeId,
        block1: NodeId,
    ) -> NodeId {
        let (h1, w1) = {
            let v = g.value(block1);
            (v.shape()[2], v.shape()[3])
        };
        let up = g.upsample_bilinear(encoder_out, h1, w1);
        let cat = g.concat(1, &[up, block1]);
        let x = self.decoder.reduce.forward(g, ctx, cat);
        let x = self.decoder.up1.forward(g, ctx, x);
        let x = self.decoder.up1_bn.forward(g, ctx, x);
        let x = g.relu(x);
        let x = self.decoder.up2.forward(g, ctx, x);
        let x = self.decoder.up2_bn.forward(g, ctx, x);
        let x = g.relu(x);
        self.decoder.classify.forward(g, ctx, x)
    }

    /// Full forward pass. `hrsi` is (B,3,H,W), `dem` (B,1,H,W).
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        hrsi: NodeId,
        dem: NodeId,
        trainable: bool,
    ) -> NetTaps {
        let ctx = ParamCtx::new(store, trainable);
        let fused = self.hfe_forward(g, &ctx, hrsi, dem);
        let (block1, block2, block3, block4, encoder_out) = self.mafe_forward(g, &ctx, fused);
        let projection = self.projection_forward(g, &ctx, encoder_out);
        let score_map = self.decoder_forward(g, &ctx, encoder_out, block1);
        NetTaps { fused, block1, block2, block3, block4, encoder_out, projection, score_map }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rand_array;
    use ndarray::ArrayD;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_size: (32, 32),
            hfe_channels: (4, 8),
            aspp_rates: vec![2, 4],
            ca_reduction: 4,
            se_reduction: 4,
            encoder_out_channels: 16,
            projection_dim: 8,
            hfe_stride: 2,
            fusion_channels: 8,
            stage_channels: [8, 12, 16, 16],
            stage_units: [1, 1, 1, 1],
            aspp_channels: 8,
            decoder_channels: (16, 8, 8),
            ..Default::default()
        }
    }

    fn forward_tiny(h: usize, w: usize, seed: u64, train: bool) -> (Network, ParamStore<f64>, Graph<f64>, NetTaps) {
        let mut cfg = tiny_config();
        cfg.input_size = (h, w);
        let net = Network::new(cfg).unwrap();
        let store: ParamStore<f64> = net.init_params(seed);
        let mut g = Graph::new(train);
        let hrsi = g.leaf(rand_array(&[1, 3, h, w], seed + 1), false);
        let dem = g.leaf(rand_array(&[1, 1, h, w], seed + 2), false);
        let taps = net.forward(&mut g, &store, hrsi, dem, train);
        (net, store, g, taps)
    }

    #[test]
    fn shape_contract_stride_8() {
        for (h, w) in [(32, 32), (40, 64)] {
            let (_, _, g, taps) = forward_tiny(h, w, 3, false);
            assert_eq!(g.value(taps.encoder_out).shape(), &[1, 16, h / 8, w / 8]);
            assert_eq!(g.value(taps.projection).shape(), &[1, 8, h / 8, w / 8]);
            assert_eq!(g.value(taps.score_map).shape(), &[1, 2, h, w]);
            assert_eq!(g.value(taps.block1).shape()[2], h / 4);
        }
    }

    #[test]
    fn full_res_hfe_also_hits_stride_8() {
        let mut cfg = tiny_config();
        cfg.hfe_stride = 1;
        cfg.input_size = (32, 32);
        let net = Network::new(cfg).unwrap();
        let store: ParamStore<f64> = net.init_params(4);
        let mut g = Graph::new(false);
        let hrsi = g.leaf(rand_array(&[1, 3, 32, 32], 5), false);
        let dem = g.leaf(rand_array(&[1, 1, 32, 32], 6), false);
        let taps = net.forward(&mut g, &store, hrsi, dem, false);
        assert_eq!(g.value(taps.encoder_out).shape(), &[1, 16, 4, 4]);
        assert_eq!(g.value(taps.score_map).shape(), &[1, 2, 32, 32]);
    }

    #[test]
    fn eval_mode_is_deterministic_bit_exact() {
        let (net, store, _, _) = forward_tiny(32, 32, 7, false);
        let run = || {
            let mut g = Graph::new(false);
            let hrsi = g.leaf(rand_array(&[1, 3, 32, 32], 8), false);
            let dem = g.leaf(rand_array(&[1, 1, 32, 32], 9), false);
            let taps = net.forward(&mut g, &store, hrsi, dem, false);
            g.value(taps.score_map).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dem_branch_influences_fusion() {
        let (net, store, _, _) = forward_tiny(32, 32, 10, false);
        let run = |dem_val: ArrayD<f64>| {
            let mut g = Graph::new(false);
            let hrsi = g.leaf(rand_array(&[1, 3, 32, 32], 11), false);
            let dem = g.leaf(dem_val, false);
            let ctx = ParamCtx::new(&store, false);
            let fused = net.hfe_forward(&mut g, &ctx, hrsi, dem);
            g.value(fused).clone()
        };
        let zero = run(ArrayD::zeros(vec![1, 1, 32, 32]));
        let random = run(rand_array(&[1, 1, 32, 32], 12));
        assert_ne!(zero, random, "elevation branch must influence the fused map");
    }

    #[test]
    fn all_zero_inputs_give_stable_bias_response() {
        let (net, store, _, _) = forward_tiny(32, 32, 13, false);
        let run = || {
            let mut g = Graph::new(false);
            let hrsi = g.leaf(ArrayD::zeros(vec![1, 3, 32, 32]), false);
            let dem = g.leaf(ArrayD::zeros(vec![1, 1, 32, 32]), false);
            let ctx = ParamCtx::new(&store, false);
            let fused = net.hfe_forward(&mut g, &ctx, hrsi, dem);
            g.value(fused).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn projection_rows_unit_norm_even_for_zero_input() {
        let (_, _, g, taps) = forward_tiny(32, 32, 14, false);
        let p = g.value(taps.projection);
        let (d, gh, gw) = (p.shape()[1], p.shape()[2], p.shape()[3]);
        for y in 0..gh {
            for x in 0..gw {
                let mut sq = 0.0;
                for c in 0..d {
                    sq += p[[0, c, y, x]] * p[[0, c, y, x]];
                }
                assert!((sq.sqrt() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn projection_dim_follows_config() {
        let mut cfg = tiny_config();
        cfg.projection_dim = 4;
        let net = Network::new(cfg).unwrap();
        let store: ParamStore<f64> = net.init_params(15);
        let mut g = Graph::new(false);
        let hrsi = g.leaf(rand_array(&[1, 3, 32, 32], 16), false);
        let dem = g.leaf(rand_array(&[1, 1, 32, 32], 17), false);
        let taps = net.forward(&mut g, &store, hrsi, dem, false);
        assert_eq!(g.value(taps.projection).shape()[1], 4);
    }

    #[test]
    fn argmax_of_scores_is_binary() {
        let (_, _, g, taps) = forward_tiny(32, 32, 18, false);
        let s = g.value(taps.score_map);
        assert_eq!(s.shape()[1], 2);
        let mut seen = [false; 2];
        for y in 0..32 {
            for x in 0..32 {
                let cls = usize::from(s[[0, 1, y, x]] > s[[0, 0, y, x]]);
                seen[cls] = true;
            }
        }
        // both logits exist and the decision is always one of the two classes
        assert!(seen[0] || seen[1]);
    }

    #[test]
    fn momentum_clone_matches_tensor_by_tensor() {
        let (net, store, _, _) = forward_tiny(32, 32, 19, false);
        let clone = store.clone();
        assert!(store.same_shapes(&clone));
        assert_eq!(store.num_elements(), net.param_elements());
    }

    #[test]
    fn deep_preset_has_roughly_100x_params_of_small() {
        let small = Network::new(NetworkConfig::small(64)).unwrap();
        let deep = Network::new(NetworkConfig::resnet101_like(64)).unwrap();
        let ratio = deep.trainable_elements() as f64 / small.trainable_elements() as f64;
        assert!(
            (40.0..250.0).contains(&ratio),
            "deep/small parameter ratio {ratio:.1} out of the expected band"
        );
        // the deep preset should land in the territory of the published
        // 101-layer fusion models (tens of millions of weights)
        assert!(deep.trainable_elements() > 40_000_000);
    }

    #[test]
    fn whole_net_gradient_reaches_inputs_and_params() {
        let mut cfg = tiny_config();
        cfg.input_size = (16, 16);
        let net = Network::new(cfg).unwrap();
        let store: ParamStore<f64> = net.init_params(20);
        let x0 = rand_array::<f64>(&[1, 3, 16, 16], 21);
        let d0 = rand_array::<f64>(&[1, 1, 16, 16], 22);

        let mut g: Graph<f64> = Graph::new(true);
        let hrsi = g.leaf(x0.clone(), true);
        let dem = g.leaf(d0.clone(), false);
        let taps = net.forward(&mut g, &store, hrsi, dem, true);
        let loss = g.mean_all(taps.score_map);
        let grads = g.backward(loss);
        let dx = grads.get(hrsi).expect("input gradient missing").clone();
        let param_grads = g.param_grads(&grads);
        assert!(param_grads.len() > 40, "expected gradients for most params");

        let numeric = crate::nn::gradcheck::finite_diff(&x0, 1e-5, |xv| {
            let mut g: Graph<f64> = Graph::new(true);
            let hrsi = g.leaf(xv.clone(), false);
            let dem = g.leaf(d0.clone(), false);
            let taps = net.forward(&mut g, &store, hrsi, dem, false);
            let loss = g.mean_all(taps.score_map);
            g.scalar(loss)
        });
        let err = crate::nn::gradcheck::max_rel_err(&dx, &numeric);
        assert!(err < 1e-5, "whole-net input gradient mismatch: {err:.3e}");
    }
}
