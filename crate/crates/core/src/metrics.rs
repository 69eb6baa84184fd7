//! Pixel confusion accumulation and the six derived scores.
//!
//! Counts are micro-averaged: sum confusion over the whole evaluation set,
//! then derive the scores once. Any 0/0 is reported as 0 and flagged in
//! `undefined` so unattended runs stay total.

use crate::error::{CoreError, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Pixelwise confusion between a binary prediction and a binary label.
pub fn accumulate_confusion(pred: &Array2<u8>, label: &Array2<u8>) -> Result<ConfusionCounts> {
    if pred.dim() != label.dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "prediction {:?} vs label {:?}",
            pred.dim(),
            label.dim()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in pred.iter().zip(label.iter()) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => {
                return Err(CoreError::InvalidLabel { value: p.max(l) as u16, row: 0, col: 0 });
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub landslide_iou: f64,
    pub background_iou: f64,
    pub miou: f64,
    /// metrics whose denominator was zero (reported as 0)
    pub undefined: Vec<String>,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> MetricReport {
    let mut undefined = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let landslide_iou = ratio(c.tp, c.tp + c.fp + c.fn_, "landslide_iou", &mut undefined);
    let background_iou = ratio(c.tn, c.tn + c.fn_ + c.fp, "background_iou", &mut undefined);
    let miou = 0.5 * (landslide_iou + background_iou);
    MetricReport { precision, recall, f1, landslide_iou, background_iou, miou, undefined, counts: *c }
}

impl MetricReport {
    /// Line-delimited plain text, one `name value` pair per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# micro-averaged over summed pixel confusion counts\n");
        for (name, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("landslide_iou", self.landslide_iou),
            ("background_iou", self.background_iou),
            ("miou", self.miou),
        ] {
            s.push_str(&format!("{name} {v:.6}\n"));
        }
        if !self.undefined.is_empty() {
            s.push_str(&format!("# undefined (0/0 -> 0): {}\n", self.undefined.join(", ")));
        }
        s
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_text()).map_err(|e| CoreError::Io { path: txt, source: e })?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(self).unwrap())
            .map_err(|e| CoreError::Io { path: json, source: e })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_confusion_example() {
        let c = ConfusionCounts { tp: 50, fp: 25, fn_: 25, tn: 900 };
        let m = compute_metrics(&c);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.landslide_iou - 0.5).abs() < 1e-12);
        assert!((m.background_iou - 900.0 / 950.0).abs() < 1e-12);
        assert!((m.miou - 0.7237).abs() < 1e-4);
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn published_f1_consistency() {
        // harmonic mean of the published baseline precision/recall pair
        let f1 = 2.0f64 * 0.462 * 0.551 / (0.462 + 0.551);
        assert!((f1 - 0.503).abs() < 1e-3, "{f1}");
    }

    #[test]
    fn perfect_prediction_all_ones() {
        let c = ConfusionCounts { tp: 100, tn: 900, fp: 0, fn_: 0 };
        let m = compute_metrics(&c);
        for v in [m.precision, m.recall, m.f1, m.landslide_iou, m.background_iou, m.miou] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn inverted_prediction_zeroes_tp_tn() {
        let label = Array2::from_shape_fn((4, 4), |(y, x)| ((y + x) % 2) as u8);
        let pred = label.mapv(|v| 1 - v);
        let c = accumulate_confusion(&pred, &label).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.tn, 0);
        assert_eq!(c.total(), 16);
    }

    #[test]
    fn exact_prediction_has_no_errors() {
        let label = Array2::from_shape_fn((4, 4), |(y, x)| ((y * x) % 2) as u8);
        let c = accumulate_confusion(&label.clone(), &label).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.fn_, 0);
    }

    #[test]
    fn hand_built_4x4_tally() {
        let mut pred = Array2::<u8>::zeros((4, 4));
        let mut label = Array2::<u8>::zeros((4, 4));
        // 3 TP, 2 FP, 1 FN, 10 TN
        for i in 0..3 {
            pred[[0, i]] = 1;
            label[[0, i]] = 1;
        }
        pred[[1, 0]] = 1;
        pred[[1, 1]] = 1;
        label[[2, 0]] = 1;
        let c = accumulate_confusion(&pred, &label).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 2, 1, 10));
        assert_eq!(c.total(), 16);
    }

    #[test]
    fn zero_denominators_flagged() {
        let c = ConfusionCounts { tp: 0, tn: 10, fp: 0, fn_: 0 };
        let m = compute_metrics(&c);
        assert_eq!(m.precision, 0.0);
        assert!(m.undefined.contains(&"precision".to_string()));
        assert!(m.undefined.contains(&"recall".to_string()));
        assert!(m.undefined.contains(&"landslide_iou".to_string()));
        assert_eq!(m.background_iou, 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Array2::<u8>::zeros((2, 2));
        let b = Array2::<u8>::zeros((2, 3));
        assert!(accumulate_confusion(&a, &b).is_err());
    }

    #[test]
    fn swap_fp_fn_swaps_precision_recall() {
        let c1 = ConfusionCounts { tp: 40, tn: 100, fp: 7, fn_: 19 };
        let c2 = ConfusionCounts { tp: 40, tn: 100, fp: 19, fn_: 7 };
        let m1 = compute_metrics(&c1);
        let m2 = compute_metrics(&c2);
        assert!((m1.precision - m2.recall).abs() < 1e-15);
        assert!((m1.recall - m2.precision).abs() < 1e-15);
        assert!((m1.f1 - m2.f1).abs() < 1e-15);
        assert!((m1.miou - m2.miou).abs() < 1e-15);
    }

    #[test]
    fn f1_and_iou_inequalities() {
        // property over a grid of confusion counts
        for tp in [0u64, 3, 50] {
            for fp in [0u64, 2, 31] {
                for fn_ in [0u64, 5, 17] {
                    let c = ConfusionCounts { tp, fp, fn_, tn: 11 };
                    let m = compute_metrics(&c);
                    assert!(m.f1 <= 0.5 * (m.precision + m.recall) + 1e-12);
                    assert!(m.landslide_iou <= m.precision.min(m.recall) + 1e-12);
                    assert!(m.f1 >= 0.0);
                    if (m.precision - m.recall).abs() < 1e-15 && m.precision > 0.0 {
                        assert!((m.f1 - m.precision).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn report_serialization() {
        let m = compute_metrics(&ConfusionCounts { tp: 50, fp: 25, fn_: 25, tn: 900 });
        let text = m.to_text();
        assert!(text.contains("miou 0.723684"));
        let td = tempfile::tempdir().unwrap();
        m.write(td.path(), "metrics").unwrap();
        let loaded: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(td.path().join("metrics.json")).unwrap())
                .unwrap();
        assert_eq!(loaded.counts, m.counts);
    }
}
