//! The training loop: per-step update order, polynomial LR schedule,
//! momentum/queue orchestration, cross-validation folds, the overfit probe,
//! and bit-compatible resume.
//!
//! One step executes, in order: online forward, momentum forward, anchor
//! sampling, projection gather, key re-encoding, enqueue/dequeue, key
//! sampling, decoder scores, loss composition, momentum EMA, then the
//! optimizer step on online parameters only.

pub mod checkpoint;
pub mod sgd;

use crate::contrast::{
    self, sampling, CandidateClass, CategoryQueue, ContrastiveConfig, MomentumPair,
};
use crate::data::{augment, SceneSample};
use crate::error::{CoreError, Result};
use crate::float::Scalar;
use crate::loss::LossConfig;
use crate::metrics::{accumulate_confusion, compute_metrics, ConfusionCounts, MetricReport};
use crate::net::{blocks::ParamCtx, Network, NetworkConfig};
use crate::nn::Graph;
use crate::rng;
use ndarray::{Array2, Array3, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub use sgd::Sgd;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    pub poly_power: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            batch_size: 2,
            epochs: 100,
            initial_lr: 0.007,
            weight_decay: 0.007,
            sgd_momentum: 0.9,
            poly_power: 0.9,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::InvalidConfig("batch size and epochs must be positive".into()));
        }
        if self.initial_lr <= 0.0 || self.poly_power <= 0.0 {
            return Err(CoreError::InvalidConfig("learning rate and poly power must be positive".into()));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(CoreError::InvalidConfig("bad weight decay or momentum".into()));
        }
        Ok(())
    }
}

/// Polynomial annealing: lr = initial * (1 - step/total)^power.
pub fn poly_lr(step: u64, total_steps: u64, hp: &Hyperparameters) -> Result<f64> {
    if total_steps == 0 {
        return Err(CoreError::InvalidConfig("total_steps must be positive".into()));
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    Ok(hp.initial_lr * (1.0 - frac).powf(hp.poly_power))
}

/// RNG streams that advance during training and must survive a resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRngs {
    pub shuffle: ChaCha8Rng,
    pub anchor: ChaCha8Rng,
    pub key: ChaCha8Rng,
}

impl TrainRngs {
    pub fn from_seed(seed: u64) -> Self {
        TrainRngs {
            shuffle: rng::stream(seed, "train/shuffle"),
            anchor: rng::stream(seed, "train/anchor"),
            key: rng::stream(seed, "train/key"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub ce: f64,
    /// None while the contrastive term is inactive (warm-up, beta 0, or no
    /// candidates in the batch)
    pub sc: Option<f64>,
    pub total: f64,
    pub anchors: usize,
    pub keys_enqueued: usize,
    pub short_sampled: bool,
    pub warmed_up: bool,
}

pub struct Trainer<F: Scalar> {
    pub net: Network,
    pub pair: MomentumPair<F>,
    pub opt: Sgd<F>,
    pub slide_queue: CategoryQueue<F>,
    pub bg_queue: CategoryQueue<F>,
    pub rngs: TrainRngs,
    pub step: u64,
    pub epoch: u64,
    pub total_steps: u64,
    pub contrastive: ContrastiveConfig,
    pub loss_cfg: LossConfig,
    pub hp: Hyperparameters,
    pub best_val_miou: Option<f64>,
}

/// batch-norm running-stat blend factor (torch convention)
const BN_MOMENTUM: f64 = 0.1;

impl<F: Scalar> Trainer<F> {
    pub fn new(
        net_config: NetworkConfig,
        contrastive: ContrastiveConfig,
        loss_cfg: LossConfig,
        hp: Hyperparameters,
        total_steps: u64,
    ) -> Result<Self> {
        hp.validate()?;
        contrastive.validate()?;
        loss_cfg.validate()?;
        let net = Network::new(net_config)?;
        let online = net.init_params::<F>(hp.seed);
        let pair = MomentumPair::new(online, F::from_f64(contrastive.momentum));
        let opt = Sgd::new(&pair.online, hp.sgd_momentum, hp.weight_decay);
        let mut q_rng = rng::stream(hp.seed, "queue/init");
        let slide_queue = CategoryQueue::random_init(contrastive.l, contrastive.d, &mut q_rng);
        let bg_queue = CategoryQueue::random_init(contrastive.l, contrastive.d, &mut q_rng);
        Ok(Trainer {
            net,
            pair,
            opt,
            slide_queue,
            bg_queue,
            rngs: TrainRngs::from_seed(hp.seed),
            step: 0,
            epoch: 0,
            total_steps,
            contrastive,
            loss_cfg,
            hp,
            best_val_miou: None,
        })
    }

    /// Contrastive term active only after both queues have been fully
    /// overwritten by real keys.
    pub fn warmed_up(&self) -> bool {
        self.slide_queue.fully_overwritten() && self.bg_queue.fully_overwritten()
    }

    pub fn train_step(&mut self, batch: &[&SceneSample]) -> Result<StepStats> {
        assert!(!batch.is_empty());
        let (h, w) = batch[0].dims();
        for s in batch {
            s.validate(self.contrastive.stride)?;
            if s.dims() != (h, w) || s.needs_interpolation() {
                return Err(CoreError::DimensionMismatch(
                    "batch scenes must share dimensions and be fully preprocessed".into(),
                ));
            }
        }
        let (hrsi, dem, labels) = batch_tensors::<F>(batch);

        // online forward (gradients tracked)
        let mut g: Graph<F> = Graph::new(true);
        let hrsi_id = g.leaf(hrsi.clone(), false);
        let dem_id = g.leaf(dem.clone(), false);
        let taps = self.net.forward(&mut g, &self.pair.online, hrsi_id, dem_id, true);

        // momentum forward on its own graph (no gradients, stats discarded)
        let mut gm: Graph<F> = Graph::new(true);
        let m_hrsi = gm.leaf(hrsi, false);
        let m_dem = gm.leaf(dem, false);
        let m_taps = self.net.forward(&mut gm, &self.pair.momentum, m_hrsi, m_dem, false);

        // anchor sampling over the pooled candidates of the batch
        let mut pooled: Vec<(usize, (usize, usize), CandidateClass)> = Vec::new();
        for (bi, s) in batch.iter().enumerate() {
            let cands = contrast::enumerate_candidates(&s.label, &s.dem, &self.contrastive)?;
            for c in cands {
                pooled.push((bi, c.grid_pos, c.class));
            }
        }
        let mut slide_pos: Vec<(usize, usize, usize)> = pooled
            .iter()
            .filter(|(_, _, c)| *c == CandidateClass::Landslide)
            .map(|&(b, (gy, gx), _)| (b, gy, gx))
            .collect();
        let mut bg_pos: Vec<(usize, usize, usize)> = pooled
            .iter()
            .filter(|(_, _, c)| *c == CandidateClass::Background)
            .map(|&(b, (gy, gx), _)| (b, gy, gx))
            .collect();
        let k = self.contrastive.k;
        let slide_sel = take_uniform(&mut slide_pos, k, &mut self.rngs.anchor);
        let bg_sel = take_uniform(&mut bg_pos, k, &mut self.rngs.anchor);
        let short_sampled = slide_sel.len() < k || bg_sel.len() < k;
        let have_both = !slide_sel.is_empty() && !bg_sel.is_empty();

        let mut positions: Vec<(usize, usize, usize)> = Vec::new();
        let mut classes: Vec<CandidateClass> = Vec::new();
        for &p in &slide_sel {
            positions.push(p);
            classes.push(CandidateClass::Landslide);
        }
        for &p in &bg_sel {
            positions.push(p);
            classes.push(CandidateClass::Background);
        }

        // re-encode the anchor positions through the momentum path and
        // update the queues before key sampling
        let mut keys_enqueued = 0usize;
        if have_both {
            let new_keys = gm.gather_pixels(m_taps.projection, &positions);
            let new_keys = gm.value(new_keys).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
            let slide_keys = rows_of(&new_keys, 0, slide_sel.len());
            let bg_keys = rows_of(&new_keys, slide_sel.len(), bg_sel.len());
            self.slide_queue.enqueue_dequeue(&slide_keys, self.step as i64)?;
            self.bg_queue.enqueue_dequeue(&bg_keys, self.step as i64)?;
            keys_enqueued = positions.len();
        }
        drop(gm);

        // loss: cross entropy always; contrastive после warm-up
        let ce_node = g.softmax_cross_entropy(taps.score_map, &labels);
        let warmed = self.warmed_up();
        let beta = self.loss_cfg.beta;
        let use_sc = warmed && beta > 0.0 && have_both;
        let (loss_node, sc_value) = if use_sc {
            let anchors = g.gather_pixels(taps.projection, &positions);
            let (pos, neg) = sampling::sample_keys_batch(
                &g.value(anchors).clone().into_dimensionality::<ndarray::Ix2>().unwrap(),
                &classes,
                &self.slide_queue,
                &self.bg_queue,
                &self.contrastive,
                &mut self.rngs.key,
            )?;
            let pos_id = g.constant(pos.into_dyn());
            let neg_id = g.constant(neg.into_dyn());
            let sc_node = g.contrastive_loss(anchors, pos_id, neg_id, F::from_f64(self.contrastive.tau));
            let sc_value = g.scalar(sc_node).to_f64_();
            let total = g.scale_add(ce_node, F::from_f64(self.loss_cfg.alpha), sc_node, F::from_f64(beta));
            (total, Some(sc_value))
        } else {
            (g.scale(ce_node, F::from_f64(self.loss_cfg.alpha)), None)
        };

        let ce_value = g.scalar(ce_node).to_f64_();
        let total_value = g.scalar(loss_node).to_f64_();

        // momentum mirror first: the EMA reads exactly the online store as it
        // stood when this step began (trainables and buffers alike)
        self.pair.update();

        // online batch-norm running stats
        let stats = g.take_bn_stats();
        for (name, s) in stats {
            let n = s.count as f64;
            let unbias = if s.count > 1 { n / (n - 1.0) } else { 1.0 };
            let var: Vec<F> = s.var.iter().map(|&v| v * F::from_f64(unbias)).collect();
            self.pair
                .online
                .update_running(&format!("{name}.running_mean"), &s.mean, F::from_f64(BN_MOMENTUM));
            self.pair
                .online
                .update_running(&format!("{name}.running_var"), &var, F::from_f64(BN_MOMENTUM));
        }
        let lr = poly_lr(self.step, self.total_steps, &self.hp)?;
        let grads = g.backward(loss_node);
        let by_name = g.param_grads(&grads);
        self.opt.step(&mut self.pair.online, &by_name, F::from_f64(lr));

        self.step += 1;
        Ok(StepStats {
            step: self.step,
            lr,
            ce: ce_value,
            sc: sc_value,
            total: total_value,
            anchors: positions.len(),
            keys_enqueued,
            short_sampled,
            warmed_up: warmed,
        })
    }

    /// Eval-mode prediction for one scene.
    pub fn predict(&self, sample: &SceneSample) -> Result<Array2<u8>> {
        predict_with(&self.net, &self.pair.online, sample)
    }

    /// Micro-averaged metrics over a sample list (eval mode, batch 1).
    pub fn evaluate(&self, samples: &[&SceneSample]) -> Result<MetricReport> {
        let mut counts = ConfusionCounts::default();
        for s in samples {
            let pred = self.predict(s)?;
            counts.merge(&accumulate_confusion(&pred, &s.label)?);
        }
        Ok(compute_metrics(&counts))
    }
}

fn take_uniform(
    pool: &mut Vec<(usize, usize, usize)>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, usize)> {
    let n = pool.len();
    let take = k.min(n);
    for i in 0..take {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool[..take].to_vec()
}

fn rows_of<F: Scalar>(a: &Array2<F>, start: usize, n: usize) -> Array2<F> {
    let mut out = Array2::<F>::zeros((n, a.shape()[1]));
    for i in 0..n {
        out.row_mut(i).assign(&a.row(start + i));
    }
    out
}

/// Pack scenes into network tensors: optical scaled to [0,1], elevation
/// standardized per scene, labels as (B,H,W) bytes.
pub fn batch_tensors<F: Scalar>(batch: &[&SceneSample]) -> (ArrayD<F>, ArrayD<F>, Array3<u8>) {
    let (h, w) = batch[0].dims();
    let b = batch.len();
    let mut hrsi = ArrayD::<F>::zeros(vec![b, 3, h, w]);
    let mut dem = ArrayD::<F>::zeros(vec![b, 1, h, w]);
    let mut labels = Array3::<u8>::zeros((b, h, w));
    for (bi, s) in batch.iter().enumerate() {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    hrsi[[bi, c, y, x]] = F::from_f64(s.hrsi[[c, y, x]] as f64 / 255.0);
                }
            }
        }
        let mean = s.dem.iter().sum::<f64>() / (h * w) as f64;
        let var = s.dem.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (h * w) as f64;
        let inv = 1.0 / var.sqrt().max(1e-6);
        for y in 0..h {
            for x in 0..w {
                dem[[bi, 0, y, x]] = F::from_f64((s.dem[[y, x]] - mean) * inv);
                labels[[bi, y, x]] = s.label[[y, x]];
            }
        }
    }
    (hrsi, dem, labels)
}

/// Eval-mode forward + argmax with an arbitrary parameter store.
pub fn predict_with<F: Scalar>(
    net: &Network,
    store: &crate::nn::ParamStore<F>,
    sample: &SceneSample,
) -> Result<Array2<u8>> {
    sample.validate(8)?;
    let (h, w) = sample.dims();
    let (hrsi, dem, _) = batch_tensors::<F>(&[sample]);
    let mut g: Graph<F> = Graph::new(false);
    let hrsi_id = g.leaf(hrsi, false);
    let dem_id = g.leaf(dem, false);
    let taps = net.forward(&mut g, store, hrsi_id, dem_id, false);
    let scores = g.value(taps.score_map);
    let mut pred = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            pred[[y, x]] = u8::from(scores[[0, 1, y, x]] > scores[[0, 0, y, x]]);
        }
    }
    Ok(pred)
}

/// Momentum-path re-encoding of anchor positions, exposed for tests and
/// inspection: forwards through the mirror encoder + projection and extracts
/// the pixels at `positions`.
pub fn reencode_anchors<F: Scalar>(
    net: &Network,
    momentum_store: &crate::nn::ParamStore<F>,
    batch: &[&SceneSample],
    positions: &[(usize, usize, usize)],
    train_mode: bool,
) -> Result<Array2<F>> {
    let (hrsi, dem, _) = batch_tensors::<F>(batch);
    let mut g: Graph<F> = Graph::new(train_mode);
    let hrsi_id = g.leaf(hrsi, false);
    let dem_id = g.leaf(dem, false);
    let ctx = ParamCtx::new(momentum_store, false);
    let fused = net.hfe_forward(&mut g, &ctx, hrsi_id, dem_id);
    let (_, _, _, _, enc) = net.mafe_forward(&mut g, &ctx, fused);
    let proj = net.projection_forward(&mut g, &ctx, enc);
    let keys = g.gather_pixels(proj, positions);
    Ok(g.value(keys).clone().into_dimensionality::<ndarray::Ix2>().unwrap())
}

// ---------------------------------------------------------------------------
// fold runner and probes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mean_ce: f64,
    pub mean_sc: Option<f64>,
    pub mean_total: f64,
    pub lr_last: f64,
    pub val_miou: f64,
    pub val_landslide_iou: f64,
}

pub struct FoldOutcome {
    pub fold: usize,
    pub best_epoch: u64,
    pub best_val_miou: f64,
    pub test_report: MetricReport,
    pub records: Vec<EpochRecord>,
}

/// Train one fold: augmented train/val pools, per-epoch validation, best-mIoU
/// checkpoint selection, and a final test evaluation with the best weights.
#[allow(clippy::too_many_arguments)]
pub fn run_fold<F: Scalar>(
    fold: usize,
    split: &crate::data::split::DatasetSplit,
    scenes: &std::collections::BTreeMap<String, SceneSample>,
    net_config: NetworkConfig,
    contrastive: ContrastiveConfig,
    loss_cfg: LossConfig,
    hp: Hyperparameters,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<FoldOutcome> {
    use crate::data::split::Partition;
    let pick = |part: Partition| -> Result<Vec<&SceneSample>> {
        let ids = split.ids_in(fold, part);
        ids.iter()
            .map(|id| {
                scenes
                    .get(id)
                    .ok_or_else(|| CoreError::Other(format!("scene '{id}' missing from dataset")))
            })
            .collect()
    };
    let train_base = pick(Partition::Train)?;
    let val_base = pick(Partition::Val)?;
    let test_base = pick(Partition::Test)?;
    if test_base.is_empty() || train_base.is_empty() {
        return Err(CoreError::InvalidConfig(format!("fold {fold} has an empty partition")));
    }

    // train and validation pools are augmented sixfold; test stays raw
    let train_pool: Vec<SceneSample> = train_base
        .iter()
        .map(|s| augment::augment(s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let val_pool: Vec<SceneSample> = val_base
        .iter()
        .map(|s| augment::augment(s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let steps_per_epoch = train_pool.len().div_ceil(hp.batch_size) as u64;
    let total_steps = steps_per_epoch * hp.epochs as u64;

    let mut trainer: Trainer<F> = match resume_from {
        Some(dir) => resume_trainer(dir)?,
        None => Trainer::new(net_config, contrastive, loss_cfg, hp, total_steps)?,
    };
    trainer.total_steps = total_steps;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CoreError::Io { path: out_dir.to_path_buf(), source: e })?;
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best = (0u64, f64::NEG_INFINITY);

    let start_epoch = trainer.epoch;
    for epoch in start_epoch..hp.epochs as u64 {
        let mut order: Vec<usize> = (0..train_pool.len()).collect();
        shuffle(&mut order, &mut trainer.rngs.shuffle);
        let (mut ce_sum, mut sc_sum, mut sc_n, mut tot_sum, mut lr_last) = (0.0, 0.0, 0usize, 0.0, 0.0);
        let mut steps = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<&SceneSample> = chunk.iter().map(|&i| &train_pool[i]).collect();
            let stats = trainer.train_step(&batch)?;
            ce_sum += stats.ce;
            if let Some(sc) = stats.sc {
                sc_sum += sc;
                sc_n += 1;
            }
            tot_sum += stats.total;
            lr_last = stats.lr;
            steps += 1;
        }
        trainer.epoch = epoch + 1;

        let val_refs: Vec<&SceneSample> = val_pool.iter().collect();
        let val = trainer.evaluate(&val_refs)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            mean_ce: ce_sum / steps as f64,
            mean_sc: (sc_n > 0).then_some(sc_sum / sc_n as f64),
            mean_total: tot_sum / steps as f64,
            lr_last,
            val_miou: val.miou,
            val_landslide_iou: val.landslide_iou,
        };
        append_record(out_dir, &rec)?;
        if val.miou > best.1 {
            best = (epoch + 1, val.miou);
            trainer.best_val_miou = Some(val.miou);
            save_trainer(&trainer, &out_dir.join("checkpoint-best"))?;
        }
        records.push(rec);
    }
    save_trainer(&trainer, &out_dir.join("checkpoint-last"))?;

    // test with the best checkpoint
    let best_trainer: Trainer<F> = resume_trainer(&out_dir.join("checkpoint-best"))?;
    let test_refs: Vec<&SceneSample> = test_base.to_vec();
    let test_report = best_trainer.evaluate(&test_refs)?;
    test_report.write(out_dir, "test_metrics")?;

    Ok(FoldOutcome { fold, best_epoch: best.0, best_val_miou: best.1, test_report, records })
}

fn append_record(dir: &Path, rec: &EpochRecord) -> Result<()> {
    use std::io::Write;
    let path = dir.join("epochs.jsonl");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CoreError::Io { path: path.clone(), source: e })?;
    writeln!(f, "{}", serde_json::to_string(rec).unwrap())
        .map_err(|e| CoreError::Io { path, source: e })
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

pub fn save_trainer<F: Scalar>(t: &Trainer<F>, dir: &Path) -> Result<()> {
    let manifest = checkpoint::Manifest {
        format: checkpoint::CHECKPOINT_FORMAT,
        dtype: F::DTYPE,
        step: t.step,
        epoch: t.epoch,
        best_val_miou: t.best_val_miou,
        net_config: t.net.config.clone(),
        contrastive: t.contrastive.clone(),
        loss: t.loss_cfg,
        hp: t.hp,
        rngs: t.rngs.clone(),
        queue_landslide: checkpoint::QueueMeta { head: 0, age: vec![], total_written: 0 },
        queue_background: checkpoint::QueueMeta { head: 0, age: vec![], total_written: 0 },
        online: vec![],
        momentum: vec![],
        velocity: vec![],
    };
    checkpoint::save_checkpoint(
        dir,
        manifest,
        &t.pair.online,
        &t.pair.momentum,
        &t.opt.velocity,
        &t.slide_queue,
        &t.bg_queue,
    )
}

pub fn resume_trainer<F: Scalar>(dir: &Path) -> Result<Trainer<F>> {
    let data = checkpoint::load_checkpoint::<F>(dir)?;
    let m = data.manifest;
    let net = Network::new(m.net_config.clone())?;
    let pair = MomentumPair {
        online: data.online,
        momentum: data.momentum,
        m: F::from_f64(m.contrastive.momentum),
    };
    let opt = Sgd {
        velocity: data.velocity,
        momentum: F::from_f64(m.hp.sgd_momentum),
        weight_decay: F::from_f64(m.hp.weight_decay),
    };
    Ok(Trainer {
        net,
        pair,
        opt,
        slide_queue: data.slide_queue,
        bg_queue: data.bg_queue,
        rngs: m.rngs.clone(),
        step: m.step,
        epoch: m.epoch,
        total_steps: 1, // caller restores the schedule context
        contrastive: m.contrastive.clone(),
        loss_cfg: m.loss,
        hp: m.hp,
        best_val_miou: m.best_val_miou,
    })
}

/// Memorization probe: train on a handful of synthetic scenes and measure
/// training-set landslide IoU in eval mode. `beta = 0` disables the
/// contrastive term; anything else exercises the full path.
pub struct ProbeOutcome {
    pub landslide_iou: f64,
    pub miou: f64,
    pub sc_steps: usize,
    pub steps: u64,
}

pub fn overfit_probe<F: Scalar>(
    n_samples: usize,
    size: usize,
    epochs: usize,
    beta: f64,
    seed: u64,
) -> Result<ProbeOutcome> {
    let synth_cfg = crate::data::synth::SyntheticTerrainConfig {
        size: (size, size),
        seed,
        ..Default::default()
    };
    let scenes = crate::data::synth::generate_dataset(&synth_cfg, n_samples, "probe")?;
    let hp = Hyperparameters { epochs, seed, ..Default::default() };
    let contrastive = ContrastiveConfig::default();
    let loss_cfg = LossConfig { alpha: 1.0, beta };
    let steps_per_epoch = scenes.len().div_ceil(hp.batch_size) as u64;
    let total_steps = steps_per_epoch * epochs as u64;
    let mut trainer: Trainer<F> = Trainer::new(
        NetworkConfig::small(size),
        contrastive,
        loss_cfg,
        hp,
        total_steps,
    )?;

    let mut sc_steps = 0usize;
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        shuffle(&mut order, &mut trainer.rngs.shuffle);
        for chunk in order.chunks(trainer.hp.batch_size) {
            let batch: Vec<&SceneSample> = chunk.iter().map(|&i| &scenes[i]).collect();
            let stats = trainer.train_step(&batch)?;
            if stats.sc.is_some() {
                sc_steps += 1;
            }
        }
    }
    let refs: Vec<&SceneSample> = scenes.iter().collect();
    let report = trainer.evaluate(&refs)?;
    Ok(ProbeOutcome {
        landslide_iou: report.landslide_iou,
        miou: report.miou,
        sc_steps,
        steps: trainer.step,
    })
}
