//! Procedural scene synthesis: fractal terrain, horseshoe-shaped relic
//! landslide depressions with steep back/side walls, and an optical render
//! via hillshading plus vegetation texture.
//!
//! Everything derives from the config seed through named streams, so a given
//! config always reproduces the same scene bit for bit.

use crate::contrast::{self, ContrastiveConfig};
use crate::data::SceneSample;
use crate::error::{CoreError, Result};
use crate::rng;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticTerrainConfig {
    pub size: (usize, usize),
    pub seed: u64,
    /// inclusive range of depressions per scene
    pub scarp_count: (usize, usize),
    /// inclusive range of wall depth in meters
    pub scarp_depth_m: (f64, f64),
    pub noise_octaves: usize,
    /// 0 = flat colors, 1 = strong speckle
    pub vegetation_texture_strength: f64,
}

impl Default for SyntheticTerrainConfig {
    fn default() -> Self {
        SyntheticTerrainConfig {
            size: (128, 128),
            seed: 0,
            scarp_count: (1, 2),
            scarp_depth_m: (20.0, 30.0),
            noise_octaves: 4,
            vegetation_texture_strength: 0.5,
        }
    }
}

/// Scenes are regenerated with a salted seed until the candidate rule finds
/// at least this many boundary hyper-pixels (default anchor count K).
const MIN_LANDSLIDE_CANDIDATES: usize = 16;
/// Wall descent completes within this many pixels of the rim.
const WALL_RAMP_PX: f64 = 3.0;

// -- gradient noise --------------------------------------------------------

fn hash2(seed: u64, xi: i64, yi: i64) -> u64 {
    let mut h = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    for v in [xi as u64, yi as u64] {
        h ^= v.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h = h.rotate_left(27).wrapping_mul(0x2545_f491_4f6c_dd1d);
    }
    h ^ (h >> 29)
}

/// Gradient (Perlin-style) noise in [-1, 1], one octave.
fn gradient_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (xi, yi) = (x.floor() as i64, y.floor() as i64);
    let (xf, yf) = (x - xi as f64, y - yi as f64);
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let grad = |h: u64, dx: f64, dy: f64| {
        let ang = (h % 1024) as f64 / 1024.0 * std::f64::consts::TAU;
        dx * ang.cos() + dy * ang.sin()
    };
    let g00 = grad(hash2(seed, xi, yi), xf, yf);
    let g10 = grad(hash2(seed, xi + 1, yi), xf - 1.0, yf);
    let g01 = grad(hash2(seed, xi, yi + 1), xf, yf - 1.0);
    let g11 = grad(hash2(seed, xi + 1, yi + 1), xf - 1.0, yf - 1.0);
    let (u, v) = (fade(xf), fade(yf));
    let top = g00 + u * (g10 - g00);
    let bot = g01 + u * (g11 - g01);
    (top + v * (bot - top)) * std::f64::consts::SQRT_2
}

fn fbm(seed: u64, x: f64, y: f64, octaves: usize) -> f64 {
    let mut total = 0.0;
    let mut freq = 1.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    for oct in 0..octaves.max(1) {
        total += amp * gradient_noise(seed.wrapping_add(oct as u64 * 1013), x * freq, y * freq);
        norm += amp;
        freq *= 2.0;
        amp *= 0.5;
    }
    total / norm
}

// -- depressions -----------------------------------------------------------

struct Scarp {
    cy: f64,
    cx: f64,
    /// semi-axes in pixels
    a: f64,
    b: f64,
    /// orientation of the major axis
    theta: f64,
    /// direction the mouth (gentle exit) faces
    mouth: f64,
    depth: f64,
}

impl Scarp {
    /// Elliptical radius (1 on the rim) and bearing from center.
    fn polar(&self, y: f64, x: f64) -> (f64, f64) {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        let e = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        (e, dy.atan2(dx))
    }

    /// Carve depth at a pixel: 0 outside, up to `depth` on the floor. The
    /// back/side walls drop the full depth within WALL_RAMP_PX of the rim;
    /// the mouth sector ramps gently over ~40% of the radius.
    fn carve(&self, y: f64, x: f64) -> f64 {
        let (e, bearing) = self.polar(y, x);
        if e >= 1.0 {
            return 0.0;
        }
        let mut ang = (bearing - self.mouth).rem_euclid(std::f64::consts::TAU);
        if ang > std::f64::consts::PI {
            ang = std::f64::consts::TAU - ang;
        }
        let in_mouth = ang < std::f64::consts::FRAC_PI_3;
        // rim distance in pixels along the local radius
        let radius = (self.a + self.b) * 0.5;
        let rim_px = (1.0 - e) * radius;
        let ramp = if in_mouth {
            (rim_px / (0.4 * radius)).min(1.0)
        } else {
            (rim_px / WALL_RAMP_PX).min(1.0)
        };
        let t = ramp * ramp * (3.0 - 2.0 * ramp);
        self.depth * t
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        self.polar(y, x).0 < 1.0
    }
}

fn sample_scarps(cfg: &SyntheticTerrainConfig, rng: &mut ChaCha8Rng, n: usize) -> Vec<Scarp> {
    let (h, w) = cfg.size;
    let side = h.min(w) as f64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = side * rng.gen_range(0.13..0.20);
        let b = a * rng.gen_range(0.75..1.05);
        let margin = a.max(b) + 6.0;
        let cy = rng.gen_range(margin..(h as f64 - margin));
        let cx = rng.gen_range(margin..(w as f64 - margin));
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let mouth = rng.gen_range(0.0..std::f64::consts::TAU);
        let depth = rng.gen_range(cfg.scarp_depth_m.0..=cfg.scarp_depth_m.1);
        out.push(Scarp { cy, cx, a, b, theta, mouth, depth });
    }
    out
}

fn render_attempt(cfg: &SyntheticTerrainConfig, salt: u64) -> SceneSample {
    let (h, w) = cfg.size;
    let master = cfg.seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9));
    let mut scarp_rng = rng::stream(master, "synth/scarps");
    let noise_seed = rng::stream_seed(master, "synth/terrain");
    let tex_seed = rng::stream_seed(master, "synth/texture");

    let n_scarps = if cfg.scarp_count.0 == cfg.scarp_count.1 {
        cfg.scarp_count.0
    } else {
        scarp_rng.gen_range(cfg.scarp_count.0..=cfg.scarp_count.1)
    };
    let scarps = sample_scarps(cfg, &mut scarp_rng, n_scarps);

    // base terrain: a broad tilt plus fractal relief
    let scale = 3.0 / h.min(w) as f64;
    let relief = 45.0;
    let mut dem = Array2::<f64>::zeros((h, w));
    let mut label = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let base = 800.0
                + 0.08 * (y as f64)
                + 0.05 * (x as f64)
                + relief * fbm(noise_seed, x as f64 * scale, y as f64 * scale, cfg.noise_octaves);
            let mut z = base;
            let mut inside = false;
            for s in &scarps {
                z -= s.carve(y as f64, x as f64);
                inside |= s.contains(y as f64, x as f64);
            }
            dem[[y, x]] = z;
            label[[y, x]] = inside as u8;
        }
    }

    // hillshade: sun from the northwest, 45 degrees up
    let az = 315.0f64.to_radians();
    let alt = 45.0f64.to_radians();
    let res = 2.0;
    let mut hrsi = Array3::<u8>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let xm = x.min(w - 2);
            let ym = y.min(h - 2);
            let dzdx = (dem[[ym, xm + 1]] - dem[[ym, xm]]) / res;
            let dzdy = (dem[[ym + 1, xm]] - dem[[ym, xm]]) / res;
            let slope = (dzdx * dzdx + dzdy * dzdy).sqrt().atan();
            let aspect = dzdy.atan2(-dzdx);
            let shade = (alt.sin() * slope.cos()
                + alt.cos() * slope.sin() * (az - aspect).cos())
            .clamp(0.05, 1.0);

            let speckle = cfg.vegetation_texture_strength
                * fbm(tex_seed, x as f64 * 0.21, y as f64 * 0.21, 3);
            let bare = label[[y, x]] == 1;
            // vegetated slopes sit green-brown; depressions slightly barer
            let (r0, g0, b0) = if bare { (0.42, 0.38, 0.30) } else { (0.30, 0.40, 0.24) };
            let tint = 1.0 + 0.35 * speckle;
            let to_u8 = |c: f64| (c * tint * shade * 255.0).clamp(0.0, 255.0) as u8;
            hrsi[[0, y, x]] = to_u8(r0);
            hrsi[[1, y, x]] = to_u8(g0);
            hrsi[[2, y, x]] = to_u8(b0);
        }
    }

    SceneSample {
        id: format!("synth{:08x}", cfg.seed),
        hrsi,
        dem,
        label,
        resolution_m: res,
        dem_resolution_m: res,
    }
}

/// Generate one scene. When scarps are requested, the scene is regenerated
/// with salted sub-seeds until the boundary candidate rule finds at least
/// [`MIN_LANDSLIDE_CANDIDATES`] hyper-pixels, so downstream anchor sampling
/// always has material to work with.
pub fn generate_synthetic_scene(cfg: &SyntheticTerrainConfig) -> Result<SceneSample> {
    let (h, w) = cfg.size;
    if h % 8 != 0 || w % 8 != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "scene size {h}x{w} must be a multiple of the hyper-pixel stride 8"
        )));
    }
    if cfg.scarp_count.0 > cfg.scarp_count.1 || cfg.scarp_depth_m.0 > cfg.scarp_depth_m.1 {
        return Err(CoreError::InvalidConfig("empty scarp parameter range".into()));
    }
    if cfg.scarp_count.1 > 0 && h.min(w) < 64 {
        return Err(CoreError::InvalidConfig(format!(
            "{h}x{w} cannot fit a depression with walls and margins; need at least 64 px"
        )));
    }
    if cfg.scarp_count.1 == 0 {
        return Ok(render_attempt(cfg, 0));
    }
    let rule = ContrastiveConfig::default();
    let mut last = None;
    for salt in 0..16u64 {
        let scene = render_attempt(cfg, salt);
        let cands = contrast::enumerate_candidates(&scene.label, &scene.dem, &rule)?;
        let (slide, _) = contrast::count_by_class(&cands);
        if cfg.scarp_count.0 == 0 || slide >= MIN_LANDSLIDE_CANDIDATES {
            return Ok(scene);
        }
        last = Some(scene);
    }
    // extremely defensive: the geometry above yields 20+ boundary patches
    Ok(last.unwrap())
}

/// Generate `count` scenes with ids `prefix0000..`, seeds seed, seed+1, ...
pub fn generate_dataset(
    base: &SyntheticTerrainConfig,
    count: usize,
    id_prefix: &str,
) -> Result<Vec<SceneSample>> {
    (0..count)
        .map(|i| {
            let cfg = SyntheticTerrainConfig { seed: base.seed + i as u64, ..base.clone() };
            let mut s = generate_synthetic_scene(&cfg)?;
            s.id = format!("{id_prefix}{i:04}");
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let cfg = SyntheticTerrainConfig { seed: 1, ..Default::default() };
        let a = generate_synthetic_scene(&cfg).unwrap();
        let b = generate_synthetic_scene(&cfg).unwrap();
        assert_eq!(a.dem, b.dem);
        assert_eq!(a.hrsi, b.hrsi);
        assert_eq!(a.label, b.label);
    }

    #[test]
    fn zero_scarps_is_all_background() {
        let cfg = SyntheticTerrainConfig {
            seed: 2,
            scarp_count: (0, 0),
            ..Default::default()
        };
        let s = generate_synthetic_scene(&cfg).unwrap();
        assert!(s.label.iter().all(|&v| v == 0));
        let cands =
            contrast::enumerate_candidates(&s.label, &s.dem, &ContrastiveConfig::default()).unwrap();
        let (slide, bg) = contrast::count_by_class(&cands);
        assert_eq!(slide, 0);
        assert_eq!(bg, (128 / 8) * (128 / 8));
    }

    #[test]
    fn scenes_have_enough_boundary_candidates() {
        for seed in 0..20 {
            let cfg = SyntheticTerrainConfig { seed, ..Default::default() };
            let s = generate_synthetic_scene(&cfg).unwrap();
            let cands =
                contrast::enumerate_candidates(&s.label, &s.dem, &ContrastiveConfig::default())
                    .unwrap();
            let (slide, bg) = contrast::count_by_class(&cands);
            assert!(slide >= 16, "seed {seed}: only {slide} landslide candidates");
            assert!(bg >= 16, "seed {seed}: only {bg} background candidates");
        }
    }

    #[test]
    fn walls_sit_above_component_median() {
        let cfg = SyntheticTerrainConfig { seed: 3, ..Default::default() };
        let s = generate_synthetic_scene(&cfg).unwrap();
        let (comp, n) = contrast::label_components(&s.label);
        assert!(n >= 1);
        let medians = contrast::component_medians(&s.dem, &comp, n);
        // rim pixels: labeled pixels with an unlabeled 4-neighbor
        let (h, w) = s.label.dim();
        let mut above = 0usize;
        let mut rim = 0usize;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if s.label[[y, x]] != 1 {
                    continue;
                }
                let edge = s.label[[y - 1, x]] == 0
                    || s.label[[y + 1, x]] == 0
                    || s.label[[y, x - 1]] == 0
                    || s.label[[y, x + 1]] == 0;
                if edge {
                    rim += 1;
                    if s.dem[[y, x]] > medians[comp[[y, x]]] {
                        above += 1;
                    }
                }
            }
        }
        assert!(rim > 0);
        assert!(
            above as f64 >= rim as f64 * 0.5,
            "only {above}/{rim} rim pixels above their component median"
        );
    }

    #[test]
    fn too_small_scene_rejected() {
        let cfg = SyntheticTerrainConfig {
            size: (32, 32),
            ..Default::default()
        };
        assert!(generate_synthetic_scene(&cfg).is_err());
        let cfg = SyntheticTerrainConfig {
            size: (30, 30),
            scarp_count: (0, 0),
            ..Default::default()
        };
        assert!(generate_synthetic_scene(&cfg).is_err());
    }

    #[test]
    fn steep_wall_drop_near_rim() {
        // somewhere on the rim the elevation must drop >= min depth over <= 4 px
        let cfg = SyntheticTerrainConfig { seed: 5, ..Default::default() };
        let s = generate_synthetic_scene(&cfg).unwrap();
        let (h, w) = s.label.dim();
        let mut steepest = 0.0f64;
        for y in 0..h {
            for x in 4..w {
                if s.label[[y, x]] == 1 && s.label[[y, x - 4]] == 0 {
                    steepest = steepest.max(s.dem[[y, x - 4]] - s.dem[[y, x]]);
                }
            }
        }
        assert!(
            steepest >= cfg.scarp_depth_m.0 * 0.8,
            "no steep wall found: best drop {steepest:.1} m"
        );
    }
}
