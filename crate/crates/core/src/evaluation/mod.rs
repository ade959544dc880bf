//! Decoding of per-class probabilities into class maps, dice and confusion
//! metrics, significance testing and report assembly.

pub mod predict;
pub mod report;
pub mod wilcoxon;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::label_algebra::{AnnotationFrame, ClassCatalog};
use crate::model::Tensor;

pub use predict::Predictor;
pub use report::{build_report, MetricsReport, SignificanceLevel, TrialPredictions};
pub use wilcoxon::{wilcoxon_signed_rank, TestMethod, WilcoxonResult};

/// Decoded class ids per pixel; background is `catalog.background_id()`,
/// i.e. the number of classes.
pub type SegmentationMap = Grid<usize>;

pub const DEFAULT_TAU: f64 = 0.5;

/// Decodes one item of a probability stack.
///
/// Without a background channel the most probable class wins if its
/// probability reaches `tau`, otherwise the pixel is background. With a
/// background channel (the last one) it is a plain argmax and `tau` is
/// unused. Ties go to the lowest channel index.
pub fn argmax_decode(probs: &Tensor, tau: f64, has_background_channel: bool) -> Result<SegmentationMap> {
    if probs.batch != 1 {
        return Err(Error::ShapeMismatch(format!(
            "decode expects a single item, got a batch of {}",
            probs.batch
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::ConfigError(format!("threshold {tau} outside [0, 1]")));
    }
    let channels = probs.channels;
    if channels == 0 || (has_background_channel && channels < 2) {
        return Err(Error::ShapeMismatch(format!("{channels} channels cannot be decoded")));
    }
    let hw = probs.pixels();
    let classes = if has_background_channel { channels - 1 } else { channels };
    let background = classes;
    let data = (0..hw)
        .map(|p| {
            let mut best = 0;
            let mut best_v = probs.data[p];
            for c in 1..channels {
                let v = probs.data[c * hw + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            if has_background_channel || f64::from(best_v) >= tau {
                best
            } else {
                background
            }
        })
        .collect();
    Grid::from_vec(probs.height, probs.width, data)
}

/// Per-pixel merge of a stack of one-class member probabilities. Same rule
/// as [`argmax_decode`] without a background channel.
pub fn ensemble_merge(stack: &Tensor, tau: f64) -> Result<SegmentationMap> {
    argmax_decode(stack, tau, false)
}

/// Ground truth of one evaluation frame: the binary masks it is annotated for.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub masks: BTreeMap<usize, Mask>,
}

impl GroundTruth {
    pub fn from_frame(frame: &AnnotationFrame) -> Self {
        GroundTruth {
            height: frame.height(),
            width: frame.width(),
            masks: frame.masks.clone(),
        }
    }

    pub fn is_fully_labeled(&self, n_classes: usize) -> bool {
        (0..n_classes).all(|c| self.masks.contains_key(&c))
    }

    /// Class id per pixel where it is known: the owning class on positive
    /// pixels, background on pixels of fully labeled frames that no class
    /// claims, unknown elsewhere.
    pub fn label_map(&self, n_classes: usize) -> Grid<Option<usize>> {
        let full = self.is_fully_labeled(n_classes);
        let mut map = Grid::filled(self.height, self.width, if full { Some(n_classes) } else { None });
        for (&c, m) in &self.masks {
            for (p, &v) in m.as_slice().iter().enumerate() {
                if v {
                    map.as_mut_slice()[p] = Some(c);
                }
            }
        }
        map
    }

    /// Background mask of a fully labeled frame.
    pub fn background_mask(&self, n_classes: usize) -> Option<Mask> {
        if !self.is_fully_labeled(n_classes) {
            return None;
        }
        Some(self.label_map(n_classes).map(|v| *v == Some(n_classes)))
    }
}

/// Dice of one class on one image; 1.0 when neither prediction nor ground
/// truth contains the class.
pub fn dice_image(pred: &SegmentationMap, gt: &Mask, class: usize) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut inter = 0u64;
    let mut p_count = 0u64;
    let mut g_count = 0u64;
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let p = p == class;
        p_count += u64::from(p);
        g_count += u64::from(g);
        inter += u64::from(p && g);
    }
    if p_count + g_count == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p_count + g_count) as f64)
}

pub fn dice_class_average(per_image: &[f64]) -> Result<f64> {
    mean(per_image, "per-image dice list")
}

/// Mean over the per-class averages.
pub fn mean_dice(class_averages: &[f64]) -> Result<f64> {
    mean(class_averages, "per-class dice list")
}

fn mean(values: &[f64], what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput(what.into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Pixel counts, rows = ground truth, columns = prediction, both indexed by
/// class id with background last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Mean of the two normalised off-diagonal shares between `a` and `b`.
    pub fn pair_confusion(&self, a: usize, b: usize) -> f64 {
        let n = self.row_normalized();
        0.5 * (n[a][b] + n[b][a])
    }
}

/// Accumulates predictions against ground truth. Pixels without a known
/// ground-truth class are skipped.
pub fn confusion_matrix(
    preds: &[SegmentationMap],
    gts: &[GroundTruth],
    n_classes: usize,
) -> Result<ConfusionMatrix> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let size = n_classes + 1;
    let mut counts = vec![vec![0u64; size]; size];
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.shape() != (gt.height, gt.width) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.shape(),
                (gt.height, gt.width)
            )));
        }
        let labels = gt.label_map(n_classes);
        for (&p, l) in pred.as_slice().iter().zip(labels.as_slice()) {
            if let Some(g) = *l {
                if p >= size {
                    return Err(Error::ShapeMismatch(format!("predicted id {p} out of range")));
                }
                counts[g][p] += 1;
            }
        }
    }
    Ok(ConfusionMatrix { counts })
}

/// Fixed colours per class id; index 0 is background.
pub fn palette(catalog: &ClassCatalog) -> Vec<[u8; 3]> {
    const COLORS: [[u8; 3]; 12] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [170, 110, 40],
    ];
    std::iter::once([0, 0, 0])
        .chain((0..catalog.len()).map(|c| COLORS[c % COLORS.len()]))
        .collect()
}

/// Palette index per pixel: 0 for background, `class + 1` otherwise.
pub fn palette_indices(map: &SegmentationMap, catalog: &ClassCatalog) -> Grid<u8> {
    let bg = catalog.background_id();
    map.map(|&c| if c == bg { 0 } else { (c + 1).min(255) as u8 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(values: &[f32]) -> Tensor {
        Tensor::from_vec(1, values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn decode_rules() {
        assert_eq!(*argmax_decode(&probs(&[0.7, 0.2]), 0.5, false).unwrap().get(0, 0), 0);
        assert_eq!(*argmax_decode(&probs(&[0.3, 0.4]), 0.5, false).unwrap().get(0, 0), 2);
        assert_eq!(*argmax_decode(&probs(&[0.6, 0.6]), 0.5, false).unwrap().get(0, 0), 0);
        for p in [[0.7, 0.2], [0.3, 0.4], [0.6, 0.6]] {
            assert_eq!(
                ensemble_merge(&probs(&p), 0.5).unwrap(),
                argmax_decode(&probs(&p), 0.5, false).unwrap()
            );
        }
        // background channel: plain argmax, tau ignored
        assert_eq!(*argmax_decode(&probs(&[0.1, 0.2, 0.05]), 0.9, true).unwrap().get(0, 0), 1);
        assert_eq!(*argmax_decode(&probs(&[0.1, 0.2, 0.9]), 0.0, true).unwrap().get(0, 0), 2);
        assert!(argmax_decode(&probs(&[0.1]), 1.5, false).is_err());
    }

    #[test]
    fn dice_values() {
        let gt = Grid::from_vec(1, 4, vec![true, true, false, false]).unwrap();
        let same = Grid::from_vec(1, 4, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(dice_image(&same, &gt, 0).unwrap(), 1.0);
        let empty_gt = Grid::filled(1, 4, false);
        let none = Grid::filled(1, 4, 1usize);
        assert_eq!(dice_image(&none, &empty_gt, 0).unwrap(), 1.0);
        let half = Grid::from_vec(1, 4, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(dice_image(&half, &gt, 0).unwrap(), 0.5);
        assert!(dice_image(&Grid::filled(2, 2, 0usize), &gt, 0).is_err());
    }

    #[test]
    fn averages() {
        assert_eq!(dice_class_average(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_dice(&[0.8, 0.4, 0.6]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(mean_dice(&[0.3]).unwrap(), 0.3);
        assert!(matches!(mean_dice(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn confusion_counts() {
        let gt = GroundTruth {
            height: 1,
            width: 4,
            masks: BTreeMap::from([
                (0, Grid::from_vec(1, 4, vec![true, false, false, false]).unwrap()),
                (1, Grid::from_vec(1, 4, vec![false, true, true, false]).unwrap()),
            ]),
        };
        let perfect = Grid::from_vec(1, 4, vec![0, 1, 1, 2]).unwrap();
        let cm = confusion_matrix(&[perfect], std::slice::from_ref(&gt), 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);

        let off = Grid::from_vec(1, 4, vec![1, 1, 2, 0]).unwrap();
        let cm = confusion_matrix(&[off], std::slice::from_ref(&gt), 2).unwrap();
        assert_eq!(cm.row_sums(), vec![1, 2, 1]);
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.pair_confusion(0, 1), 0.5 * (1.0 + 0.0));

        // partial gt: only positives of the annotated class are counted
        let partial = GroundTruth {
            height: 1,
            width: 4,
            masks: BTreeMap::from([(1, gt.masks[&1].clone())]),
        };
        let cm = confusion_matrix(&[Grid::filled(1, 4, 0usize)], &[partial], 2).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.counts[1][0], 2);
    }
}
