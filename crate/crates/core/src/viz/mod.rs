//! Grad-CAM heatmaps and overlay rendering.

use crate::data::SceneSample;
use crate::error::{CoreError, Result};
use crate::float::Scalar;
use crate::net::{NetTaps, Network};
use crate::nn::pool::resize_plane;
use crate::nn::{Graph, ParamStore};
use crate::train::batch_tensors;
use ndarray::{Array2, Array3, ArrayD};
use std::path::Path;

/// Channel-weighted activation map: weights are the spatial means of the
/// gradient, the map is ReLU(sum_c w_c * A_c), then min-max normalized.
/// Returns the raw (grid-sized) map and whether it was all-zero (degenerate).
pub fn cam_from_parts<F: Scalar>(activations: &ArrayD<F>, grads: &ArrayD<F>) -> (Array2<f64>, bool) {
    assert_eq!(activations.shape(), grads.shape());
    let (c, h, w) = (activations.shape()[1], activations.shape()[2], activations.shape()[3]);
    let mut weights = vec![0.0f64; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                acc += grads[[0, ci, y, x]].to_f64_();
            }
        }
        weights[ci] = acc / (h * w) as f64;
    }
    let mut cam = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ci in 0..c {
                acc += weights[ci] * activations[[0, ci, y, x]].to_f64_();
            }
            cam[[y, x]] = acc.max(0.0);
        }
    }
    let hi = cam.iter().copied().fold(0.0f64, f64::max);
    let lo = cam.iter().copied().fold(f64::INFINITY, f64::min);
    let degenerate = hi <= 0.0;
    if !degenerate && hi > lo {
        cam.mapv_inplace(|v| (v - lo) / (hi - lo));
    } else if !degenerate {
        cam.fill(1.0);
    }
    (cam, degenerate)
}

#[derive(Debug)]
pub struct GradCam {
    /// heatmap at input resolution, values in [0, 1]
    pub heatmap: Array2<f64>,
    pub degenerate: bool,
    pub layer: String,
}

/// Grad-CAM for `target_class` at the named tap (see
/// [`NetTaps::LAYER_NAMES`]; the encoder's last layer is `encoder.out`).
pub fn grad_cam<F: Scalar>(
    net: &Network,
    store: &ParamStore<F>,
    sample: &SceneSample,
    layer: &str,
    target_class: usize,
) -> Result<GradCam> {
    if target_class > 1 {
        return Err(CoreError::InvalidConfig("target class must be 0 or 1".into()));
    }
    let (h, w) = sample.dims();
    let (hrsi, dem, _) = batch_tensors::<F>(&[sample]);
    let mut g: Graph<F> = Graph::new(false);
    let hrsi_id = g.leaf(hrsi, true);
    let dem_id = g.leaf(dem, false);
    // trainable=true so the backward sweep reaches intermediate activations
    let taps = net.forward(&mut g, store, hrsi_id, dem_id, true);
    let tap = taps.by_name(layer).ok_or_else(|| CoreError::LayerNotFound {
        name: layer.to_string(),
        valid: NetTaps::LAYER_NAMES.join(", "),
    })?;
    // class score: sum of the target-class logits over all pixels
    let class_map = g.slice_axis(taps.score_map, 1, target_class, 1);
    let score = g.sum_all(class_map);
    let grads = g.backward_retaining(score);
    let act = g.value(tap).clone();
    let grad = grads
        .get(tap)
        .ok_or_else(|| CoreError::Other(format!("no gradient reached layer '{layer}'")))?
        .clone();
    let (cam, degenerate) = cam_from_parts(&act, &grad);

    let (gh, gw) = cam.dim();
    let mut up = vec![0.0f64; h * w];
    resize_plane(cam.as_slice().unwrap(), gh, gw, h, w, &mut up);
    let mut heatmap = Array2::from_shape_vec((h, w), up).unwrap();
    heatmap.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(GradCam { heatmap, degenerate, layer: layer.to_string() })
}

/// Simple dark-blue -> magenta -> yellow color ramp.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let anchors: [(f64, [f64; 3]); 4] = [
        (0.0, [13.0, 8.0, 135.0]),
        (0.4, [156.0, 23.0, 158.0]),
        (0.75, [237.0, 121.0, 83.0]),
        (1.0, [240.0, 249.0, 33.0]),
    ];
    let mut lo = anchors[0];
    let mut hi = anchors[anchors.len() - 1];
    for wnd in anchors.windows(2) {
        if t >= wnd[0].0 && t <= wnd[1].0 {
            lo = wnd[0];
            hi = wnd[1];
            break;
        }
    }
    let f = if hi.0 > lo.0 { (t - lo.0) / (hi.0 - lo.0) } else { 0.0 };
    let mut rgb = [0u8; 3];
    for i in 0..3 {
        rgb[i] = (lo.1[i] + (hi.1[i] - lo.1[i]) * f).round().clamp(0.0, 255.0) as u8;
    }
    rgb
}

pub enum OverlayContent<'a> {
    Heatmap(&'a Array2<f64>),
    Mask(&'a Array2<u8>),
    None,
}

/// Blend a heatmap or prediction mask over the optical raster and trace the
/// label boundary in red. Deterministic: same inputs, same bytes.
pub fn render_overlay(
    hrsi: &Array3<u8>,
    content: OverlayContent<'_>,
    label_outline: Option<&Array2<u8>>,
) -> Result<image::RgbImage> {
    let (_, h, w) = hrsi.dim();
    match &content {
        OverlayContent::Heatmap(m) if m.dim() != (h, w) => {
            return Err(CoreError::DimensionMismatch(format!(
                "heatmap {:?} vs optical ({h}, {w})",
                m.dim()
            )));
        }
        OverlayContent::Mask(m) if m.dim() != (h, w) => {
            return Err(CoreError::DimensionMismatch(format!(
                "mask {:?} vs optical ({h}, {w})",
                m.dim()
            )));
        }
        _ => {}
    }
    if let Some(lab) = label_outline {
        if lab.dim() != (h, w) {
            return Err(CoreError::DimensionMismatch(format!(
                "label {:?} vs optical ({h}, {w})",
                lab.dim()
            )));
        }
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let base = [hrsi[[0, y, x]] as f64, hrsi[[1, y, x]] as f64, hrsi[[2, y, x]] as f64];
            let px = match &content {
                OverlayContent::Heatmap(m) => {
                    let t = m[[y, x]];
                    let c = colormap(t);
                    let alpha = 0.55 * t;
                    [
                        base[0] * (1.0 - alpha) + c[0] as f64 * alpha,
                        base[1] * (1.0 - alpha) + c[1] as f64 * alpha,
                        base[2] * (1.0 - alpha) + c[2] as f64 * alpha,
                    ]
                }
                OverlayContent::Mask(m) => {
                    if m[[y, x]] == 1 {
                        [base[0] * 0.5, base[1] * 0.5 + 60.0, base[2] * 0.5 + 120.0]
                    } else {
                        base
                    }
                }
                OverlayContent::None => base,
            };
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    px[0].round().clamp(0.0, 255.0) as u8,
                    px[1].round().clamp(0.0, 255.0) as u8,
                    px[2].round().clamp(0.0, 255.0) as u8,
                ]),
            );
        }
    }
    if let Some(lab) = label_outline {
        for y in 0..h {
            for x in 0..w {
                if lab[[y, x]] != 1 {
                    continue;
                }
                let boundary = (y == 0 || lab[[y - 1, x]] == 0)
                    || (y + 1 == h || lab[[y + 1, x]] == 0)
                    || (x == 0 || lab[[y, x - 1]] == 0)
                    || (x + 1 == w || lab[[y, x + 1]] == 0);
                if boundary {
                    img.put_pixel(x as u32, y as u32, image::Rgb([230, 20, 20]));
                }
            }
        }
    }
    Ok(img)
}

pub fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| CoreError::Image { path: path.to_path_buf(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rand_array;

    #[test]
    fn weight_collapse_single_channel() {
        // gradient identically 1 -> weights collapse to 1 -> heatmap is the
        // min-max normalized ReLU of the activation itself
        let act = rand_array::<f64>(&[1, 1, 4, 4], 3);
        let grad = ArrayD::from_elem(vec![1, 1, 4, 4], 1.0);
        let (cam, degenerate) = cam_from_parts(&act, &grad);
        assert!(!degenerate);
        let relu: Vec<f64> = act.iter().map(|v| v.max(0.0)).collect();
        let hi = relu.iter().copied().fold(0.0f64, f64::max);
        let lo = relu.iter().copied().fold(f64::INFINITY, f64::min);
        for (c, r) in cam.iter().zip(relu.iter()) {
            assert!((c - (r - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_negative_sum_is_degenerate_zero() {
        let act = ArrayD::from_elem(vec![1, 2, 3, 3], 1.0);
        let grad = ArrayD::from_elem(vec![1, 2, 3, 3], -1.0);
        let (cam, degenerate) = cam_from_parts(&act, &grad);
        assert!(degenerate);
        assert!(cam.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cam_matches_two_step_oracle() {
        let act = rand_array::<f64>(&[1, 3, 5, 5], 7);
        let grad = rand_array::<f64>(&[1, 3, 5, 5], 8);
        let (cam, _) = cam_from_parts(&act, &grad);
        // oracle: explicit weights then explicit weighted sum, no shortcuts
        let mut want = Array2::<f64>::zeros((5, 5));
        for y in 0..5 {
            for x in 0..5 {
                let mut acc = 0.0;
                for c in 0..3 {
                    let mut wsum = 0.0;
                    for yy in 0..5 {
                        for xx in 0..5 {
                            wsum += grad[[0, c, yy, xx]];
                        }
                    }
                    acc += wsum / 25.0 * act[[0, c, y, x]];
                }
                want[[y, x]] = acc.max(0.0);
            }
        }
        let hi = want.iter().copied().fold(0.0f64, f64::max);
        let lo = want.iter().copied().fold(f64::INFINITY, f64::min);
        want.mapv_inplace(|v| (v - lo) / (hi - lo));
        for (a, b) in cam.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn positive_gradient_scaling_leaves_cam_invariant() {
        let act = rand_array::<f64>(&[1, 4, 6, 6], 9);
        let grad = rand_array::<f64>(&[1, 4, 6, 6], 10);
        let (a, _) = cam_from_parts(&act, &grad);
        let (b, _) = cam_from_parts(&act, &(&grad * 3.7));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn overlay_without_content_is_optical_plus_contour() {
        let hrsi = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| (c * 31 + y * 7 + x) as u8);
        let mut label = Array2::<u8>::zeros((8, 8));
        for y in 2..6 {
            for x in 2..6 {
                label[[y, x]] = 1;
            }
        }
        let img = render_overlay(&hrsi, OverlayContent::None, Some(&label)).unwrap();
        // interior stays untouched, boundary painted red
        assert_eq!(img.get_pixel(0, 0).0, [hrsi[[0, 0, 0]], hrsi[[1, 0, 0]], hrsi[[2, 0, 0]]]);
        assert_eq!(img.get_pixel(2, 2).0, [230, 20, 20]);
        assert_ne!(img.get_pixel(3, 3).0, [230, 20, 20]);
    }

    #[test]
    fn saturated_heatmap_fully_tints() {
        let hrsi = Array3::<u8>::zeros((3, 4, 4));
        let heat = Array2::<f64>::from_elem((4, 4), 1.0);
        let img = render_overlay(&hrsi, OverlayContent::Heatmap(&heat), None).unwrap();
        let c = colormap(1.0);
        let expect = [
            (c[0] as f64 * 0.55).round() as u8,
            (c[1] as f64 * 0.55).round() as u8,
            (c[2] as f64 * 0.55).round() as u8,
        ];
        assert_eq!(img.get_pixel(1, 1).0, expect);
    }

    #[test]
    fn byte_identical_renders() {
        let hrsi = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c + y + x) % 251) as u8);
        let heat = Array2::from_shape_fn((16, 16), |(y, x)| ((y * x) as f64 / 225.0).min(1.0));
        let td = tempfile::tempdir().unwrap();
        let p1 = td.path().join("a.png");
        let p2 = td.path().join("b.png");
        save_png(&render_overlay(&hrsi, OverlayContent::Heatmap(&heat), None).unwrap(), &p1).unwrap();
        save_png(&render_overlay(&hrsi, OverlayContent::Heatmap(&heat), None).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn size_mismatch_rejected() {
        let hrsi = Array3::<u8>::zeros((3, 8, 8));
        let heat = Array2::<f64>::zeros((4, 4));
        assert!(render_overlay(&hrsi, OverlayContent::Heatmap(&heat), None).is_err());
    }

    #[test]
    fn unknown_layer_lists_valid_names() {
        let net = Network::new(crate::net::NetworkConfig {
            input_size: (32, 32),
            hfe_channels: (4, 8),
            aspp_rates: vec![2],
            ca_reduction: 4,
            se_reduction: 4,
            encoder_out_channels: 16,
            projection_dim: 8,
            hfe_stride: 2,
            fusion_channels: 8,
            stage_channels: [8, 8, 8, 8],
            stage_units: [1, 1, 1, 1],
            aspp_channels: 8,
            decoder_channels: (8, 8, 8),
            ..Default::default()
        })
        .unwrap();
        let store: ParamStore<f32> = net.init_params(1);
        let scene = crate::data::synth::generate_synthetic_scene(
            &crate::data::synth::SyntheticTerrainConfig {
                size: (64, 64),
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let err = grad_cam(&net, &store, &scene, "bogus", 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("encoder.out") && msg.contains("hfe.fused"), "{msg}");
    }

    #[test]
    fn end_to_end_heatmap_in_unit_range() {
        let net = Network::new(crate::net::NetworkConfig {
            input_size: (64, 64),
            hfe_channels: (4, 8),
            aspp_rates: vec![2],
            ca_reduction: 4,
            se_reduction: 4,
            encoder_out_channels: 16,
            projection_dim: 8,
            hfe_stride: 2,
            fusion_channels: 8,
            stage_channels: [8, 8, 8, 8],
            stage_units: [1, 1, 1, 1],
            aspp_channels: 8,
            decoder_channels: (8, 8, 8),
            ..Default::default()
        })
        .unwrap();
        let store: ParamStore<f32> = net.init_params(2);
        let scene = crate::data::synth::generate_synthetic_scene(
            &crate::data::synth::SyntheticTerrainConfig {
                size: (64, 64),
                seed: 6,
                ..Default::default()
            },
        )
        .unwrap();
        for layer in ["encoder.out", "hfe.fused"] {
            let cam = grad_cam(&net, &store, &scene, layer, 1).unwrap();
            assert_eq!(cam.heatmap.dim(), (64, 64));
            assert!(cam.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
