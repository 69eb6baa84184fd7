//! Per-channel histogram equalization for 8-bit optical rasters.
//!
//! Remap convention: h(v) = floor(255 * cdf(v) / N) with an inclusive CDF.
//! This matches the worked two-level case (50% at 0, 50% at 255 maps to
//! {127, 255}) and sends a single-valued image to 255, the degenerate-case
//! convention documented for this pipeline. The mapping is monotone
//! non-decreasing by construction, so pixel rank order is preserved.

use ndarray::Array3;

/// Equalize one channel in place.
pub fn equalize_channel(data: &mut [u8]) {
    let n = data.len();
    if n == 0 {
        return;
    }
    let mut hist = [0u64; 256];
    for &v in data.iter() {
        hist[v as usize] += 1;
    }
    let mut lut = [0u8; 256];
    let mut cdf = 0u64;
    for v in 0..256 {
        cdf += hist[v];
        lut[v] = ((255 * cdf) / n as u64) as u8;
    }
    for v in data.iter_mut() {
        *v = lut[*v as usize];
    }
}

/// Equalize each channel of a (3, H, W) raster independently.
pub fn equalize_histogram(hrsi: &Array3<u8>) -> Array3<u8> {
    let mut out = hrsi.clone();
    let (c, h, w) = out.dim();
    let plane = h * w;
    let slice = out.as_slice_mut().unwrap();
    for ch in 0..c {
        equalize_channel(&mut slice[ch * plane..(ch + 1) * plane]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_valued_image_maps_to_255() {
        let mut data = vec![7u8; 100];
        equalize_channel(&mut data);
        assert!(data.iter().all(|&v| v == 255));
    }

    #[test]
    fn two_level_image_maps_to_127_and_255() {
        let mut data = vec![0u8; 100];
        data[50..].fill(255);
        equalize_channel(&mut data);
        assert!(data[..50].iter().all(|&v| v == 127), "low level -> {}", data[0]);
        assert!(data[50..].iter().all(|&v| v == 255));
    }

    #[test]
    fn uniform_histogram_is_near_identity() {
        // 256 pixels, one of each level
        let mut data: Vec<u8> = (0..=255).collect();
        let orig = data.clone();
        equalize_channel(&mut data);
        for (o, e) in orig.iter().zip(data.iter()) {
            assert!(
                (*o as i16 - *e as i16).abs() <= 1,
                "level {o} mapped to {e}, off by more than 1"
            );
        }
    }

    #[test]
    fn mapping_is_monotone() {
        // arbitrary histogram; rank order must be preserved
        let mut data: Vec<u8> = (0..4096u32).map(|i| ((i * i * 31) % 251) as u8).collect();
        let orig = data.clone();
        equalize_channel(&mut data);
        for i in 0..orig.len() {
            for j in 0..orig.len() {
                if orig[i] < orig[j] {
                    assert!(data[i] <= data[j], "monotonicity broken");
                }
            }
        }
    }

    #[test]
    fn channels_are_independent() {
        let mut raster = Array3::<u8>::zeros((3, 4, 4));
        raster.index_axis_mut(ndarray::Axis(0), 0).fill(9); // single level -> 255
        for (i, v) in raster
            .index_axis_mut(ndarray::Axis(0), 1)
            .iter_mut()
            .enumerate()
        {
            *v = if i < 8 { 0 } else { 255 }; // two level -> {127, 255}
        }
        let out = equalize_histogram(&raster);
        assert!(out.index_axis(ndarray::Axis(0), 0).iter().all(|&v| v == 255));
        assert_eq!(out[[1, 0, 0]], 127);
        assert_eq!(out[[1, 3, 3]], 255);
    }
}
