//! Scene ingest, preprocessing, augmentation, splits, and synthesis.
//!
//! Dataset directory layout: `<root>/<id>/hrsi.png, dem.png, label.png` plus
//! an optional `meta.json` sidecar carrying resolutions and the scale/offset
//! used to pack elevations into 16-bit PNG. TIFF is accepted for any raster.

pub mod augment;
pub mod equalize;
pub mod kriging;
pub mod split;
pub mod synth;

use crate::error::{CoreError, Result};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One georegistered optical / elevation / label triple.
///
/// The DEM may be coarser than the optical raster until
/// [`kriging::interpolate_dem`] has been applied; `needs_interpolation`
/// reports that state.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub id: String,
    /// (3, H, W), 8 bits per channel
    pub hrsi: Array3<u8>,
    /// (h, w) elevation in meters; equals (H, W) once preprocessed
    pub dem: Array2<f64>,
    /// (H, W) in {0, 1}
    pub label: Array2<u8>,
    /// optical ground resolution, m/pixel
    pub resolution_m: f64,
    /// DEM ground resolution, m/pixel
    pub dem_resolution_m: f64,
}

impl SceneSample {
    /// Optical raster height/width.
    pub fn dims(&self) -> (usize, usize) {
        (self.hrsi.shape()[1], self.hrsi.shape()[2])
    }

    pub fn needs_interpolation(&self) -> bool {
        self.dem.dim() != self.dims()
    }

    /// Check the per-sample invariants; `stride` is the hyper-pixel side.
    pub fn validate(&self, stride: usize) -> Result<()> {
        let (h, w) = self.dims();
        if self.label.dim() != (h, w) {
            return Err(CoreError::DimensionMismatch(format!(
                "label {:?} vs optical ({h}, {w})",
                self.label.dim()
            )));
        }
        if self.resolution_m <= 0.0 {
            return Err(CoreError::InvalidConfig("resolution_m must be positive".into()));
        }
        for ((r, c), &v) in self.label.indexed_iter() {
            if v > 1 {
                return Err(CoreError::InvalidLabel { value: v as u16, row: r, col: c });
            }
        }
        if !self.needs_interpolation() && (h % stride != 0 || w % stride != 0) {
            return Err(CoreError::DimensionMismatch(format!(
                "raster {h}x{w} is not a multiple of the hyper-pixel stride {stride}"
            )));
        }
        Ok(())
    }
}

/// Sidecar metadata stored next to the rasters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub resolution_m: f64,
    pub dem_resolution_m: f64,
    /// elevation = raw * dem_scale + dem_offset
    pub dem_scale: f64,
    pub dem_offset: f64,
}

impl Default for SceneMeta {
    fn default() -> Self {
        SceneMeta { resolution_m: 2.0, dem_resolution_m: 2.0, dem_scale: 1.0, dem_offset: 0.0 }
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(CoreError::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| CoreError::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Load one scene from explicit raster paths. A `meta.json` next to the DEM
/// supplies resolutions and the 16-bit scale/offset; defaults otherwise.
pub fn load_scene(hrsi_path: &Path, dem_path: &Path, label_path: &Path) -> Result<SceneSample> {
    let meta: SceneMeta = {
        let meta_path = dem_path.with_file_name("meta.json");
        if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path)
                .map_err(|e| CoreError::Io { path: meta_path.clone(), source: e })?;
            serde_json::from_str(&text)
                .map_err(|e| CoreError::Other(format!("bad meta.json: {e}")))?
        } else {
            SceneMeta::default()
        }
    };

    let hrsi_img = open_image(hrsi_path)?.to_rgb8();
    let (w, h) = (hrsi_img.width() as usize, hrsi_img.height() as usize);
    let mut hrsi = Array3::<u8>::zeros((3, h, w));
    for (x, y, px) in hrsi_img.enumerate_pixels() {
        for c in 0..3 {
            hrsi[[c, y as usize, x as usize]] = px.0[c];
        }
    }

    let dem_img = open_image(dem_path)?;
    let dem16 = dem_img.to_luma16();
    let (dw, dh) = (dem16.width() as usize, dem16.height() as usize);
    let mut dem = Array2::<f64>::zeros((dh, dw));
    for (x, y, px) in dem16.enumerate_pixels() {
        dem[[y as usize, x as usize]] = px.0[0] as f64 * meta.dem_scale + meta.dem_offset;
    }

    let label_img = open_image(label_path)?.to_luma8();
    let (lw, lh) = (label_img.width() as usize, label_img.height() as usize);
    if (lh, lw) != (h, w) {
        return Err(CoreError::DimensionMismatch(format!(
            "label {lh}x{lw} vs optical {h}x{w}"
        )));
    }
    let mut label = Array2::<u8>::zeros((lh, lw));
    for (x, y, px) in label_img.enumerate_pixels() {
        let v = px.0[0];
        if v > 1 {
            return Err(CoreError::InvalidLabel {
                value: v as u16,
                row: y as usize,
                col: x as usize,
            });
        }
        label[[y as usize, x as usize]] = v;
    }

    let id = hrsi_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());

    let sample = SceneSample {
        id,
        hrsi,
        dem,
        label,
        resolution_m: meta.resolution_m,
        dem_resolution_m: meta.dem_resolution_m,
    };
    sample.validate(8)?;
    Ok(sample)
}

/// Load `<dir>/hrsi.*`, `<dir>/dem.*`, `<dir>/label.*`.
pub fn load_scene_dir(dir: &Path) -> Result<SceneSample> {
    let find = |stem: &str| -> Result<PathBuf> {
        for ext in ["png", "tif", "tiff"] {
            let p = dir.join(format!("{stem}.{ext}"));
            if p.exists() {
                return Ok(p);
            }
        }
        Err(CoreError::MissingFile(dir.join(format!("{stem}.png"))))
    };
    load_scene(&find("hrsi")?, &find("dem")?, &find("label")?)
}

/// Write a scene in the dataset layout (PNG rasters + meta.json).
pub fn save_scene(root: &Path, sample: &SceneSample) -> Result<()> {
    let dir = root.join(&sample.id);
    std::fs::create_dir_all(&dir).map_err(|e| CoreError::Io { path: dir.clone(), source: e })?;
    let (h, w) = sample.dims();

    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            rgb.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    sample.hrsi[[0, y, x]],
                    sample.hrsi[[1, y, x]],
                    sample.hrsi[[2, y, x]],
                ]),
            );
        }
    }
    let hrsi_path = dir.join("hrsi.png");
    rgb.save(&hrsi_path)
        .map_err(|e| CoreError::Image { path: hrsi_path, message: e.to_string() })?;

    // pack the DEM into 16 bits with a full-range affine
    let (dh, dw) = sample.dem.dim();
    let lo = sample.dem.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.dem.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
    let mut dem16 = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(dw as u32, dh as u32);
    for y in 0..dh {
        for x in 0..dw {
            let raw = ((sample.dem[[y, x]] - lo) / scale).round().clamp(0.0, 65535.0) as u16;
            dem16.put_pixel(x as u32, y as u32, image::Luma([raw]));
        }
    }
    let dem_path = dir.join("dem.png");
    dem16
        .save(&dem_path)
        .map_err(|e| CoreError::Image { path: dem_path, message: e.to_string() })?;

    let mut lab = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            lab.put_pixel(x as u32, y as u32, image::Luma([sample.label[[y, x]]]));
        }
    }
    let label_path = dir.join("label.png");
    lab.save(&label_path)
        .map_err(|e| CoreError::Image { path: label_path, message: e.to_string() })?;

    let meta = SceneMeta {
        resolution_m: sample.resolution_m,
        dem_resolution_m: sample.dem_resolution_m,
        dem_scale: scale,
        dem_offset: lo,
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| CoreError::Io { path: meta_path, source: e })?;
    Ok(())
}

/// Scan a dataset root for scene directories, sorted by id.
pub fn list_scene_ids(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let rd = std::fs::read_dir(root).map_err(|e| CoreError::Io { path: root.to_path_buf(), source: e })?;
    for entry in rd {
        let entry = entry.map_err(|e| CoreError::Io { path: root.to_path_buf(), source: e })?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}
