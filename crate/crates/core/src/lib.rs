//! Semantic segmentation of relic landslides from paired optical imagery and
//! elevation rasters, trained with hyper-pixel contrastive learning against
//! momentum-updated per-class key queues.
//!
//! The crate is organized around six subsystems:
//!
//! - [`data`]: raster ingest, kriging/bilinear DEM interpolation, histogram
//!   equalization, augmentation, dataset splits, and synthetic scene
//!   generation for end-to-end verification.
//! - [`net`]: the dual-branch encoder (optical + elevation), coordinate
//!   attention fusion, dilated residual backbone with squeeze-excitation and
//!   atrous spatial pyramid pooling, projection head, and transposed-conv
//!   decoder.
//! - [`contrast`]: hyper-pixel candidate enumeration, anchor/key sampling,
//!   per-class key queues, the contrastive loss, and the momentum mirror.
//! - [`loss`] / [`metrics`]: cross-entropy, loss composition, confusion
//!   accumulation and derived scores.
//! - [`train`]: SGD with polynomial LR decay, the per-step update order,
//!   cross-validation folds, and bit-compatible checkpointing.
//! - [`viz`]: Grad-CAM heatmaps and overlay rendering.
//!
//! Everything runs on CPU in either f32 or f64 through the [`float::Scalar`]
//! abstraction, and every stochastic component draws from a named stream of a
//! single master seed ([`rng`]).

// modules land incrementally during the build-out; re-enable as they compile
pub mod config;
pub mod contrast;
pub mod net;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod float;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod train;
pub mod viz;

pub use error::{CoreError, Result};
