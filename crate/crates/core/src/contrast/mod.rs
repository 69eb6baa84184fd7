//! Hyper-pixel contrastive machinery: candidate enumeration over label + DEM,
//! anchor/key sampling, per-class key queues, and the momentum mirror.

pub mod momentum;
pub mod queue;
pub mod sampling;

use crate::error::{CoreError, Result};
use ndarray::Array2;

pub use momentum::MomentumPair;
pub use queue::CategoryQueue;
pub use sampling::{sample_keys, select_anchor_positions, AnchorSelection};

/// Knobs of the contrastive engine. `stride` is the hyper-pixel side: one
/// encoder-grid pixel corresponds to a stride x stride patch of the input.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// anchors per class per batch
    pub k: usize,
    /// keys per polarity per anchor
    pub m: usize,
    /// queue length per class
    pub l: usize,
    /// embedding dimension
    pub d: usize,
    pub tau: f64,
    /// momentum coefficient for the mirror encoder
    pub momentum: f64,
    /// fraction of M selected as hard keys
    pub hard_fraction: f64,
    pub stride: usize,
    /// landslide pixel count bounds for a boundary hyper-pixel (inclusive)
    pub min_pixels: usize,
    pub max_pixels: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            k: 16,
            m: 1000,
            l: 4096,
            d: 128,
            tau: 0.1,
            momentum: 0.999,
            hard_fraction: 0.10,
            stride: 8,
            min_pixels: 7,
            max_pixels: 57,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l < self.m {
            return Err(CoreError::InvalidConfig(format!(
                "queue length {} must be >= M {}",
                self.l, self.m
            )));
        }
        if self.tau <= 0.0 {
            return Err(CoreError::InvalidConfig("tau must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(CoreError::InvalidConfig("hard_fraction must be in [0, 1]".into()));
        }
        if self.min_pixels > self.max_pixels || self.max_pixels >= self.stride * self.stride {
            return Err(CoreError::InvalidConfig(format!(
                "pixel-count bounds [{}, {}] must satisfy min <= max < stride^2 = {}",
                self.min_pixels,
                self.max_pixels,
                self.stride * self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CandidateClass {
    Landslide,
    Background,
}

/// One stride x stride patch that passed the candidate rules.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPixelCandidate {
    /// (row, col) on the (H/stride, W/stride) grid
    pub grid_pos: (usize, usize),
    pub class: CandidateClass,
    pub landslide_pixel_count: usize,
    pub mean_elevation_m: f64,
    pub component_id: Option<usize>,
}

/// 8-connected components of the binary label. Returns (component map with
/// usize::MAX for background, component count); ids are assigned in scan
/// order so the result is deterministic.
pub fn label_components(label: &Array2<u8>) -> (Array2<usize>, usize) {
    let (h, w) = label.dim();
    let mut comp = Array2::<usize>::from_elem((h, w), usize::MAX);
    let mut next = 0usize;
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if label[[y, x]] != 1 || comp[[y, x]] != usize::MAX {
                continue;
            }
            comp[[y, x]] = next;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (cy as i64 + dy, cx as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if label[[ny, nx]] == 1 && comp[[ny, nx]] == usize::MAX {
                            comp[[ny, nx]] = next;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            next += 1;
        }
    }
    (comp, next)
}

/// Median elevation over every pixel of each component. Even-sized
/// populations take the mean of the two middle values.
pub fn component_medians(dem: &Array2<f64>, comp: &Array2<usize>, n_comp: usize) -> Vec<f64> {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_comp];
    for ((y, x), &c) in comp.indexed_iter() {
        if c != usize::MAX {
            buckets[c].push(dem[[y, x]]);
        }
    }
    buckets
        .into_iter()
        .map(|mut b| {
            b.sort_by(|a, c| a.partial_cmp(c).unwrap());
            let n = b.len();
            if n % 2 == 1 {
                b[n / 2]
            } else {
                0.5 * (b[n / 2 - 1] + b[n / 2])
            }
        })
        .collect()
}

/// Scan the stride-grid and apply the two candidate rules:
/// boundary patches (landslide pixel count within the configured bounds)
/// whose mean elevation exceeds their component's median become landslide
/// candidates; patches with zero landslide pixels become background
/// candidates; everything else is excluded.
pub fn enumerate_candidates(
    label: &Array2<u8>,
    dem: &Array2<f64>,
    config: &ContrastiveConfig,
) -> Result<Vec<HyperPixelCandidate>> {
    let (h, w) = label.dim();
    let s = config.stride;
    if h % s != 0 || w % s != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "raster {h}x{w} not a multiple of stride {s}"
        )));
    }
    if dem.dim() != (h, w) {
        return Err(CoreError::DimensionMismatch(format!(
            "dem {:?} vs label ({h}, {w})",
            dem.dim()
        )));
    }
    let (comp, n_comp) = label_components(label);
    let medians = component_medians(dem, &comp, n_comp);

    let (gh, gw) = (h / s, w / s);
    let mut out = Vec::new();
    for gy in 0..gh {
        for gx in 0..gw {
            let (y0, x0) = (gy * s, gx * s);
            let mut count = 0usize;
            let mut elev_sum = 0.0f64;
            let mut comp_votes: std::collections::BTreeMap<usize, usize> = Default::default();
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    elev_sum += dem[[y, x]];
                    if label[[y, x]] == 1 {
                        count += 1;
                        *comp_votes.entry(comp[[y, x]]).or_insert(0) += 1;
                    }
                }
            }
            let mean_elev = elev_sum / (s * s) as f64;
            if count == 0 {
                out.push(HyperPixelCandidate {
                    grid_pos: (gy, gx),
                    class: CandidateClass::Background,
                    landslide_pixel_count: 0,
                    mean_elevation_m: mean_elev,
                    component_id: None,
                });
                continue;
            }
            if count < config.min_pixels || count > config.max_pixels {
                continue;
            }
            // patch overlapping several components follows the biggest
            // contributor; ties go to the smaller id
            let (&comp_id, _) = comp_votes
                .iter()
                .max_by(|(ida, na), (idb, nb)| na.cmp(nb).then(idb.cmp(ida)))
                .unwrap();
            if mean_elev > medians[comp_id] {
                out.push(HyperPixelCandidate {
                    grid_pos: (gy, gx),
                    class: CandidateClass::Landslide,
                    landslide_pixel_count: count,
                    mean_elevation_m: mean_elev,
                    component_id: Some(comp_id),
                });
            }
        }
    }
    Ok(out)
}

/// Count candidates per class.
pub fn count_by_class(cands: &[HyperPixelCandidate]) -> (usize, usize) {
    let slide = cands.iter().filter(|c| c.class == CandidateClass::Landslide).count();
    (slide, cands.len() - slide)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ContrastiveConfig {
        ContrastiveConfig { stride: 8, ..Default::default() }
    }

    /// 16x16 scene: one 8x8-aligned patch holds a 5x6 = 30-pixel blob.
    fn blob_scene(patch_elev: f64, rest_elev: f64) -> (Array2<u8>, Array2<f64>) {
        let mut label = Array2::<u8>::zeros((16, 16));
        let mut dem = Array2::<f64>::from_elem((16, 16), rest_elev);
        // 30 pixels inside patch (0,0); the component extends into patch (0,1)
        for y in 1..6 {
            for x in 2..8 {
                label[[y, x]] = 1;
            }
        }
        // fully cover patch (0,1) so it is interior (64 pixels) and the
        // component median sits at rest_elev
        for y in 0..8 {
            for x in 8..16 {
                label[[y, x]] = 1;
            }
        }
        for y in 0..8 {
            for x in 0..8 {
                dem[[y, x]] = patch_elev;
            }
        }
        (label, dem)
    }

    #[test]
    fn boundary_patch_above_median_is_candidate() {
        let (label, dem) = blob_scene(105.0, 100.0);
        let cands = enumerate_candidates(&label, &dem, &cfg()).unwrap();
        let hit = cands
            .iter()
            .find(|c| c.grid_pos == (0, 0))
            .expect("patch (0,0) missing");
        assert_eq!(hit.class, CandidateClass::Landslide);
        assert_eq!(hit.landslide_pixel_count, 30);
        assert!(hit.mean_elevation_m > 100.0);
    }

    #[test]
    fn boundary_patch_below_median_is_excluded() {
        let (label, dem) = blob_scene(95.0, 100.0);
        let cands = enumerate_candidates(&label, &dem, &cfg()).unwrap();
        assert!(cands.iter().all(|c| c.grid_pos != (0, 0)));
    }

    #[test]
    fn interior_patch_is_excluded() {
        // patch (0,1) is fully covered: 64 landslide pixels
        let (label, dem) = blob_scene(105.0, 100.0);
        let cands = enumerate_candidates(&label, &dem, &cfg()).unwrap();
        assert!(cands.iter().all(|c| c.grid_pos != (0, 1)));
    }

    #[test]
    fn zero_count_patches_are_background() {
        let (label, dem) = blob_scene(105.0, 100.0);
        let cands = enumerate_candidates(&label, &dem, &cfg()).unwrap();
        let bg: Vec<_> = cands
            .iter()
            .filter(|c| c.class == CandidateClass::Background)
            .collect();
        assert!(bg.iter().any(|c| c.grid_pos == (1, 0)));
        assert!(bg.iter().all(|c| c.landslide_pixel_count == 0));
    }

    #[test]
    fn low_count_boundary_patch_excluded_entirely() {
        // 4 pixels in patch (0,0): below min_pixels, not background either
        let mut label = Array2::<u8>::zeros((16, 16));
        for y in 0..2 {
            for x in 6..8 {
                label[[y, x]] = 1;
            }
        }
        for x in 8..16 {
            for y in 0..6 {
                label[[y, x]] = 1;
            }
        }
        let dem = Array2::<f64>::from_elem((16, 16), 100.0);
        let cands = enumerate_candidates(&label, &dem, &cfg()).unwrap();
        assert!(cands.iter().all(|c| c.grid_pos != (0, 0)));
    }

    #[test]
    fn components_and_medians() {
        let mut label = Array2::<u8>::zeros((8, 8));
        label[[0, 0]] = 1;
        label[[1, 1]] = 1; // 8-connected with (0,0)
        label[[5, 5]] = 1; // separate component
        let (comp, n) = label_components(&label);
        assert_eq!(n, 2);
        assert_eq!(comp[[0, 0]], comp[[1, 1]]);
        assert_ne!(comp[[0, 0]], comp[[5, 5]]);
        let dem = Array2::from_shape_fn((8, 8), |(y, x)| (y * 8 + x) as f64);
        let med = component_medians(&dem, &comp, n);
        assert_eq!(med[0], 0.5 * (0.0 + 9.0));
        assert_eq!(med[1], 45.0);
    }

    #[test]
    fn config_invariants_enforced() {
        let mut c = ContrastiveConfig::default();
        c.validate().unwrap();
        c.l = 10;
        assert!(c.validate().is_err());
        let mut c = ContrastiveConfig::default();
        c.tau = 0.0;
        assert!(c.validate().is_err());
        let mut c = ContrastiveConfig::default();
        c.max_pixels = 64;
        assert!(c.validate().is_err());
    }
}
