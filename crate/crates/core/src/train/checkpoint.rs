//! Bit-compatible training checkpoints: a JSON manifest with config echo,
//! counters, RNG states, and queue metadata, plus one little-endian binary
//! blob per tensor (f32 by default, f64 when training in 64-bit mode).

use crate::contrast::{CategoryQueue, ContrastiveConfig};
use crate::error::{CoreError, Result};
use crate::float::{Dtype, Scalar};
use crate::loss::LossConfig;
use crate::net::NetworkConfig;
use crate::nn::{ParamKind, ParamStore};
use crate::train::{Hyperparameters, TrainRngs};
use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueMeta {
    pub head: usize,
    pub age: Vec<i64>,
    pub total_written: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub dtype: Dtype,
    pub step: u64,
    pub epoch: u64,
    pub best_val_miou: Option<f64>,
    pub net_config: NetworkConfig,
    pub contrastive: ContrastiveConfig,
    pub loss: LossConfig,
    pub hp: Hyperparameters,
    pub rngs: TrainRngs,
    pub queue_landslide: QueueMeta,
    pub queue_background: QueueMeta,
    pub online: Vec<TensorEntry>,
    pub momentum: Vec<TensorEntry>,
    pub velocity: Vec<TensorEntry>,
}

fn kind_str(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Weight => "weight",
        ParamKind::BiasOrNorm => "bias_or_norm",
        ParamKind::Buffer => "buffer",
    }
}

fn kind_from(s: &str) -> Result<ParamKind> {
    match s {
        "weight" => Ok(ParamKind::Weight),
        "bias_or_norm" => Ok(ParamKind::BiasOrNorm),
        "buffer" => Ok(ParamKind::Buffer),
        other => Err(CoreError::Checkpoint(format!("unknown param kind '{other}'"))),
    }
}

fn write_blob<F: Scalar>(path: &Path, data: &[F]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * F::DTYPE.byte_width());
    for v in data {
        v.write_le(&mut bytes);
    }
    std::fs::write(path, bytes).map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })
}

fn read_blob<F: Scalar>(path: &Path, len: usize) -> Result<Vec<F>> {
    let bytes =
        std::fs::read(path).map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
    let w = F::DTYPE.byte_width();
    if bytes.len() != len * w {
        return Err(CoreError::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            len * w,
            bytes.len()
        )));
    }
    Ok((0..len).map(|i| F::read_le(&bytes[i * w..])).collect())
}

fn store_entries<F: Scalar>(store: &ParamStore<F>) -> Vec<TensorEntry> {
    store
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            kind: kind_str(p.kind).to_string(),
        })
        .collect()
}

fn save_store<F: Scalar>(dir: &Path, store: &ParamStore<F>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
    for p in store.iter() {
        write_blob(&dir.join(format!("{}.bin", p.name)), p.value.as_slice().unwrap())?;
    }
    Ok(())
}

fn load_store<F: Scalar>(dir: &Path, entries: &[TensorEntry]) -> Result<ParamStore<F>> {
    let mut store = ParamStore::new();
    for e in entries {
        let len = e.shape.iter().product();
        let data = read_blob::<F>(&dir.join(format!("{}.bin", e.name)), len)?;
        let arr = ArrayD::from_shape_vec(e.shape.clone(), data)
            .map_err(|err| CoreError::Checkpoint(format!("{}: {err}", e.name)))?;
        store.insert(&e.name, arr, kind_from(&e.kind)?);
    }
    Ok(store)
}

fn save_velocity<F: Scalar>(dir: &Path, velocity: &BTreeMap<String, ArrayD<F>>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
    for (name, v) in velocity {
        write_blob(&dir.join(format!("{name}.bin")), v.as_slice().unwrap())?;
    }
    Ok(())
}

fn save_queue<F: Scalar>(path: &Path, q: &CategoryQueue<F>) -> Result<()> {
    write_blob(path, q.buffer.as_slice().unwrap())
}

fn load_queue<F: Scalar>(path: &Path, meta: &QueueMeta, l: usize, d: usize) -> Result<CategoryQueue<F>> {
    let data = read_blob::<F>(path, l * d)?;
    Ok(CategoryQueue {
        buffer: Array2::from_shape_vec((l, d), data).unwrap(),
        head: meta.head,
        age: meta.age.clone(),
        total_written: meta.total_written,
    })
}

/// Everything needed to resume training bit-compatibly.
pub struct CheckpointData<F: Scalar> {
    pub manifest: Manifest,
    pub online: ParamStore<F>,
    pub momentum: ParamStore<F>,
    pub velocity: BTreeMap<String, ArrayD<F>>,
    pub slide_queue: CategoryQueue<F>,
    pub bg_queue: CategoryQueue<F>,
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint<F: Scalar>(
    dir: &Path,
    manifest_base: Manifest,
    online: &ParamStore<F>,
    momentum: &ParamStore<F>,
    velocity: &BTreeMap<String, ArrayD<F>>,
    slide_queue: &CategoryQueue<F>,
    bg_queue: &CategoryQueue<F>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        dtype: F::DTYPE,
        online: store_entries(online),
        momentum: store_entries(momentum),
        velocity: velocity
            .iter()
            .map(|(n, v)| TensorEntry { name: n.clone(), shape: v.shape().to_vec(), kind: "velocity".into() })
            .collect(),
        queue_landslide: QueueMeta {
            head: slide_queue.head,
            age: slide_queue.age.clone(),
            total_written: slide_queue.total_written,
        },
        queue_background: QueueMeta {
            head: bg_queue.head,
            age: bg_queue.age.clone(),
            total_written: bg_queue.total_written,
        },
        ..manifest_base
    };
    save_store(&dir.join("params").join("online"), online)?;
    save_store(&dir.join("params").join("momentum"), momentum)?;
    save_velocity(&dir.join("params").join("velocity"), velocity)?;
    std::fs::create_dir_all(dir.join("queues"))
        .map_err(|e| CoreError::Io { path: dir.join("queues"), source: e })?;
    save_queue(&dir.join("queues").join("landslide.bin"), slide_queue)?;
    save_queue(&dir.join("queues").join("background.bin"), bg_queue)?;
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| CoreError::Io { path: mpath, source: e })?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<CheckpointData<F>> {
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(CoreError::MissingFile(mpath));
    }
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| CoreError::Io { path: mpath.clone(), source: e })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CoreError::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(CoreError::Checkpoint(format!("unsupported format {}", manifest.format)));
    }
    if manifest.dtype != F::DTYPE {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint dtype {} does not match runtime precision {}",
            manifest.dtype,
            F::DTYPE
        )));
    }
    let online = load_store::<F>(&dir.join("params").join("online"), &manifest.online)?;
    let momentum = load_store::<F>(&dir.join("params").join("momentum"), &manifest.momentum)?;
    let mut velocity = BTreeMap::new();
    for e in &manifest.velocity {
        let len = e.shape.iter().product();
        let data = read_blob::<F>(&dir.join("params").join("velocity").join(format!("{}.bin", e.name)), len)?;
        velocity.insert(e.name.clone(), ArrayD::from_shape_vec(e.shape.clone(), data).unwrap());
    }
    let (l, d) = (manifest.contrastive.l, manifest.contrastive.d);
    let slide_queue = load_queue::<F>(&dir.join("queues").join("landslide.bin"), &manifest.queue_landslide, l, d)?;
    let bg_queue = load_queue::<F>(&dir.join("queues").join("background.bin"), &manifest.queue_background, l, d)?;
    Ok(CheckpointData { manifest, online, momentum, velocity, slide_queue, bg_queue })
}
