//! Joint geometric augmentation: the identity, both flips, and the three
//! quarter-turn rotations, applied identically to optical, DEM, and label.

use crate::data::SceneSample;
use crate::error::{CoreError, Result};
use ndarray::{Array2, Array3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeomTransform {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl GeomTransform {
    pub const ALL: [GeomTransform; 6] = [
        GeomTransform::Identity,
        GeomTransform::FlipH,
        GeomTransform::FlipV,
        GeomTransform::Rot90,
        GeomTransform::Rot180,
        GeomTransform::Rot270,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            GeomTransform::Identity => "id",
            GeomTransform::FlipH => "hf",
            GeomTransform::FlipV => "vf",
            GeomTransform::Rot90 => "r90",
            GeomTransform::Rot180 => "r180",
            GeomTransform::Rot270 => "r270",
        }
    }

    fn requires_square(&self) -> bool {
        matches!(self, GeomTransform::Rot90 | GeomTransform::Rot270)
    }

    /// Source coordinates for destination (y, x) on an (h, w) grid.
    /// Rotations are clockwise.
    #[inline]
    pub fn source_of(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            GeomTransform::Identity => (y, x),
            GeomTransform::FlipH => (y, w - 1 - x),
            GeomTransform::FlipV => (h - 1 - y, x),
            GeomTransform::Rot90 => (h - 1 - x, y),
            GeomTransform::Rot180 => (h - 1 - y, w - 1 - x),
            GeomTransform::Rot270 => (x, w - 1 - y),
        }
    }

    /// Where a source position lands after the transform (square grids).
    pub fn map_position(&self, pos: (usize, usize), side: usize) -> (usize, usize) {
        let (y, x) = pos;
        let n = side - 1;
        match self {
            GeomTransform::Identity => (y, x),
            GeomTransform::FlipH => (y, n - x),
            GeomTransform::FlipV => (n - y, x),
            GeomTransform::Rot90 => (x, n - y),
            GeomTransform::Rot180 => (n - y, n - x),
            GeomTransform::Rot270 => (n - x, y),
        }
    }

    pub fn apply2<T: Copy + Default>(&self, a: &Array2<T>) -> Array2<T> {
        let (h, w) = a.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (sy, sx) = self.source_of(y, x, h, w);
            a[[sy, sx]]
        })
    }

    pub fn apply3<T: Copy + Default>(&self, a: &Array3<T>) -> Array3<T> {
        let (c, h, w) = a.dim();
        Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
            let (sy, sx) = self.source_of(y, x, h, w);
            a[[ch, sy, sx]]
        })
    }

    pub fn apply2f(&self, a: &Array2<f64>) -> Array2<f64> {
        let (h, w) = a.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (sy, sx) = self.source_of(y, x, h, w);
            a[[sy, sx]]
        })
    }

    pub fn apply_scene(&self, s: &SceneSample) -> SceneSample {
        SceneSample {
            id: if *self == GeomTransform::Identity {
                s.id.clone()
            } else {
                format!("{}#{}", s.id, self.tag())
            },
            hrsi: self.apply3(&s.hrsi),
            dem: self.apply2f(&s.dem),
            label: self.apply2(&s.label),
            resolution_m: s.resolution_m,
            dem_resolution_m: s.dem_resolution_m,
        }
    }
}

/// The original plus its five augmented variants.
pub fn augment(sample: &SceneSample) -> Result<Vec<SceneSample>> {
    let (h, w) = sample.dims();
    if h != w && GeomTransform::ALL.iter().any(|t| t.requires_square()) {
        return Err(CoreError::InvalidConfig(format!(
            "quarter-turn rotations need square rasters, got {h}x{w}"
        )));
    }
    if sample.needs_interpolation() {
        return Err(CoreError::DimensionMismatch(
            "augment requires a DEM interpolated to optical resolution".into(),
        ));
    }
    Ok(GeomTransform::ALL.iter().map(|t| t.apply_scene(sample)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(h: usize, w: usize) -> SceneSample {
        SceneSample {
            id: "s".into(),
            hrsi: Array3::from_shape_fn((3, h, w), |(c, y, x)| (c * 91 + y * 17 + x * 3) as u8),
            dem: Array2::from_shape_fn((h, w), |(y, x)| (y * 31 + x) as f64),
            label: Array2::from_shape_fn((h, w), |(y, x)| ((y + x) % 2) as u8),
            resolution_m: 2.0,
            dem_resolution_m: 2.0,
        }
    }

    #[test]
    fn produces_six_variants() {
        let out = augment(&scene(16, 16)).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0].id, "s");
        assert_eq!(out[3].id, "s#r90");
    }

    #[test]
    fn rot180_equals_both_flips_bit_exact() {
        let s = scene(16, 16);
        let r180 = GeomTransform::Rot180.apply_scene(&s);
        let hv = GeomTransform::FlipV.apply_scene(&GeomTransform::FlipH.apply_scene(&s));
        assert_eq!(r180.hrsi, hv.hrsi);
        assert_eq!(r180.dem, hv.dem);
        assert_eq!(r180.label, hv.label);
    }

    #[test]
    fn flip_twice_is_identity_bit_exact() {
        let s = scene(16, 16);
        let twice = GeomTransform::FlipH.apply_scene(&GeomTransform::FlipH.apply_scene(&s));
        assert_eq!(twice.hrsi, s.hrsi);
        assert_eq!(twice.dem, s.dem);
        assert_eq!(twice.label, s.label);
    }

    #[test]
    fn four_rot90_is_identity() {
        let s = scene(8, 8);
        let mut t = s.clone();
        for _ in 0..4 {
            t = GeomTransform::Rot90.apply_scene(&t);
        }
        assert_eq!(t.label, s.label);
        assert_eq!(t.hrsi, s.hrsi);
    }

    #[test]
    fn non_square_rotation_rejected() {
        let err = augment(&scene(8, 16)).unwrap_err();
        assert!(err.to_string().contains("square"));
    }

    #[test]
    fn position_map_matches_raster_transform() {
        let s = scene(8, 8);
        for t in GeomTransform::ALL {
            let moved = t.apply_scene(&s);
            for y in 0..8 {
                for x in 0..8 {
                    let (ny, nx) = t.map_position((y, x), 8);
                    assert_eq!(moved.label[[ny, nx]], s.label[[y, x]], "{t:?} at ({y},{x})");
                }
            }
        }
    }
}
