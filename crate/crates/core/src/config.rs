//! Run configuration: one human-readable TOML document with nested sections,
//! loaded from file, overridable by CLI flags, and echoed verbatim into the
//! run directory.

use crate::contrast::ContrastiveConfig;
use crate::data::kriging::{InterpolationMethod, VariogramFamily};
use crate::data::synth::SyntheticTerrainConfig;
use crate::error::{CoreError, Result};
use crate::loss::LossConfig;
use crate::net::NetworkConfig;
use crate::train::Hyperparameters;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub precision: Precision,
    /// informational; this build is CPU-only
    pub device: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: PathBuf::from("runs/run0"),
            seed: 0,
            precision: Precision::F32,
            device: "cpu".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub root: PathBuf,
    pub splits: PathBuf,
    pub fold: usize,
    /// histogram equalization applied before augmentation
    pub equalize: bool,
    pub interpolation: InterpolationMethod,
    pub variogram: VariogramFamily,
    /// nearest sources per kriging target (0 = all)
    pub kriging_neighborhood: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: PathBuf::from("data"),
            splits: PathBuf::from("data/splits.txt"),
            fold: 0,
            equalize: true,
            interpolation: InterpolationMethod::Kriging,
            variogram: VariogramFamily::Spherical,
            kriging_neighborhood: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synth: SyntheticTerrainConfig,
    pub network: NetworkConfig,
    pub contrastive: ContrastiveConfig,
    pub loss: LossConfig,
    pub hyper: Hyperparameters,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CoreError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field invariants checked after flag overrides.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.contrastive.validate()?;
        self.loss.validate()?;
        self.hyper.validate()?;
        if self.network.projection_dim != self.contrastive.d {
            return Err(CoreError::InvalidConfig(format!(
                "projection_dim {} must match contrastive embedding dim {}",
                self.network.projection_dim, self.contrastive.d
            )));
        }
        if self.contrastive.stride != 8 {
            return Err(CoreError::InvalidConfig("hyper-pixel stride is fixed at 8".into()));
        }
        Ok(())
    }

    /// Write the merged config verbatim into the run directory.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
        let path = dir.join("config.toml");
        std::fs::write(&path, toml::to_string_pretty(self).unwrap())
            .map_err(|e| CoreError::Io { path, source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.network.projection_dim, cfg.network.projection_dim);
        assert_eq!(back.run.precision, cfg.run.precision);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let text = r#"
[run]
seed = 7

[hyper]
epochs = 3
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.hyper.epochs, 3);
        assert_eq!(cfg.hyper.batch_size, 2);
        assert_eq!(cfg.network.projection_dim, 128);
    }

    #[test]
    fn cross_field_mismatch_rejected() {
        let mut cfg = RunConfig::default();
        cfg.contrastive.d = 64;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn echo_writes_config() {
        let td = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        cfg.echo(td.path()).unwrap();
        let loaded = RunConfig::load(&td.path().join("config.toml")).unwrap();
        assert_eq!(loaded.hyper.epochs, cfg.hyper.epochs);
    }
}
