//! Masked, positive-weighted binary cross-entropy and the positive-weight
//! schemes used by the three training trials.
//!
//! For class `c` the loss over a batch of `B` images is
//!
//! ```text
//! L_c = 1/B * 1/P_c * sum_{b,p : state != IGNORE} bce_w(z[b,c,p], y[b,c,p])
//! bce_w(z, y) = w_c * y * softplus(-z) + (1 - y) * softplus(z)
//! ```
//!
//! where `P_c` counts the non-ignored pixels of channel `c` across the whole
//! batch. The total is the mean of `L_c` over the classes with `P_c > 0`.

use serde::{Deserialize, Serialize};

use crate::data_fusion::stats::PixelStats;
use crate::error::{Error, Result};
use crate::label_algebra::{Supervision, SupervisionVolume};

pub const MIN_POS_WEIGHT: f64 = 1e-3;
pub const MAX_POS_WEIGHT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Negatives include the ones implied by other classes' positives.
    Implicit,
    /// Single-class ensemble member; background weight fixed at one.
    EnsembleMember,
    /// Softmax over negated positive shares.
    FullySupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveWeights {
    pub scheme: WeightScheme,
    pub weights: Vec<f64>,
    /// Weight of the background pseudo-class, where the scheme defines one.
    pub background: Option<f64>,
}

impl PositiveWeights {
    pub fn uniform(channels: usize, scheme: WeightScheme) -> Self {
        PositiveWeights {
            scheme,
            weights: vec![1.0; channels],
            background: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLoss {
    /// `None` when every pixel of the class was ignored in the batch.
    pub loss: Option<f64>,
    pub valid_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classes: Vec<ClassLoss>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn active_classes(&self) -> usize {
        self.classes.iter().filter(|c| c.loss.is_some()).count()
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(logits: &[f64], supervision: &[SupervisionVolume], weights: &PositiveWeights) -> Result<()> {
    let first = supervision
        .first()
        .ok_or_else(|| Error::EmptyInput("empty supervision batch".into()))?;
    let channels = first.channels();
    let pixels = first.pixels();
    for (b, s) in supervision.iter().enumerate() {
        if s.channels() != channels || s.pixels() != pixels {
            return Err(Error::ShapeMismatch(format!(
                "supervision {b} has {} channels of {} pixels, expected {channels} of {pixels}",
                s.channels(),
                s.pixels()
            )));
        }
    }
    let expected = supervision.len() * channels * pixels;
    if logits.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for a batch needing {expected}",
            logits.len()
        )));
    }
    if weights.len() != channels {
        return Err(Error::ShapeMismatch(format!(
            "{} positive weights for {channels} channels",
            weights.len()
        )));
    }
    Ok(())
}

/// Loss value only. `logits` is laid out `[batch][channel][pixel]`, matching
/// the supervision volumes.
pub fn masked_weighted_bce(
    logits: &[f64],
    supervision: &[SupervisionVolume],
    weights: &PositiveWeights,
) -> Result<LossBreakdown> {
    compute(logits, supervision, weights, None)
}

/// Loss and its gradient with respect to every logit. Ignored entries get a
/// gradient of exactly zero.
pub fn masked_weighted_bce_with_grad(
    logits: &[f64],
    supervision: &[SupervisionVolume],
    weights: &PositiveWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; logits.len()];
    let breakdown = compute(logits, supervision, weights, Some(&mut grad))?;
    Ok((breakdown, grad))
}

fn compute(
    logits: &[f64],
    supervision: &[SupervisionVolume],
    weights: &PositiveWeights,
    grad: Option<&mut Vec<f64>>,
) -> Result<LossBreakdown> {
    check_shapes(logits, supervision, weights)?;
    let batch = supervision.len();
    let channels = supervision[0].channels();
    let pixels = supervision[0].pixels();

    let mut sums = vec![0.0f64; channels];
    let mut valid = vec![0u64; channels];
    for (b, sup) in supervision.iter().enumerate() {
        for c in 0..channels {
            let w = weights.weights[c];
            let base = (b * channels + c) * pixels;
            for (p, state) in sup.channel(c).iter().enumerate() {
                let z = logits[base + p];
                match state {
                    Supervision::Pos => sums[c] += w * softplus(-z),
                    Supervision::Neg => sums[c] += softplus(z),
                    Supervision::Ignore => continue,
                }
                valid[c] += 1;
            }
        }
    }

    let active = valid.iter().filter(|&&v| v > 0).count();
    let classes: Vec<ClassLoss> = (0..channels)
        .map(|c| ClassLoss {
            loss: (valid[c] > 0).then(|| sums[c] / (batch as f64 * valid[c] as f64)),
            valid_pixels: valid[c],
        })
        .collect();
    let total = if active == 0 {
        0.0
    } else {
        classes.iter().filter_map(|c| c.loss).sum::<f64>() / active as f64
    };

    if let Some(grad) = grad {
        for (b, sup) in supervision.iter().enumerate() {
            for c in 0..channels {
                if valid[c] == 0 {
                    continue;
                }
                let scale = 1.0 / (active as f64 * batch as f64 * valid[c] as f64);
                let w = weights.weights[c];
                let base = (b * channels + c) * pixels;
                for (p, state) in sup.channel(c).iter().enumerate() {
                    let z = logits[base + p];
                    grad[base + p] = match state {
                        Supervision::Pos => scale * w * (sigmoid(z) - 1.0),
                        Supervision::Neg => scale * sigmoid(z),
                        Supervision::Ignore => 0.0,
                    };
                }
            }
        }
    }

    Ok(LossBreakdown { classes, total })
}

fn clamp_weight(w: f64) -> f64 {
    w.clamp(MIN_POS_WEIGHT, MAX_POS_WEIGHT)
}

/// Negative-to-positive ratio per class, counting negatives implied by other
/// classes' positives.
pub fn pos_weight_il(stats: &PixelStats, class_names: &[String]) -> Result<PositiveWeights> {
    let weights = stats
        .classes
        .iter()
        .enumerate()
        .map(|(c, counts)| {
            if counts.positive == 0 {
                return Err(Error::NoPositives(class_label(class_names, c)));
            }
            let neg = (counts.negative + counts.implied_negative) as f64;
            Ok(clamp_weight(neg / counts.positive as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PositiveWeights {
        scheme: WeightScheme::Implicit,
        weights,
        background: None,
    })
}

/// Weight for a one-class ensemble member, from its own subset's annotated
/// counts only.
pub fn pos_weight_en(stats: &PixelStats, class: usize, class_name: &str) -> Result<PositiveWeights> {
    let counts = stats
        .classes
        .get(class)
        .ok_or_else(|| Error::UnknownClass(class_name.to_string()))?;
    if counts.positive == 0 {
        return Err(Error::NoPositives(class_name.to_string()));
    }
    Ok(PositiveWeights {
        scheme: WeightScheme::EnsembleMember,
        weights: vec![clamp_weight(counts.negative as f64 / counts.positive as f64)],
        background: Some(1.0),
    })
}

/// Softmax over the negated positive share of each class. With
/// `include_background` the background share (pixels no class claims) gets
/// its own trailing weight.
pub fn pos_weight_fs(stats: &PixelStats, include_background: bool) -> Result<PositiveWeights> {
    if let Some((c, _)) = stats
        .classes
        .iter()
        .enumerate()
        .find(|(_, k)| k.ignore > 0 || k.implied_negative > 0)
    {
        return Err(Error::NotFullyLabeled(format!(
            "class #{c} has unannotated pixels"
        )));
    }
    if stats.pixels == 0 {
        return Err(Error::EmptyInput("statistics cover no pixels".into()));
    }
    let total = stats.pixels as f64;
    let mut shares: Vec<f64> = stats
        .classes
        .iter()
        .map(|k| k.positive as f64 / total)
        .collect();
    if include_background {
        let claimed: u64 = stats.classes.iter().map(|k| k.positive).sum();
        shares.push((stats.pixels - claimed) as f64 / total);
    }
    Ok(PositiveWeights {
        scheme: WeightScheme::FullySupervised,
        weights: softmax_negated(&shares),
        background: None,
    })
}

fn softmax_negated(shares: &[f64]) -> Vec<f64> {
    let max = shares
        .iter()
        .map(|s| -s)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = shares.iter().map(|s| (-s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn class_label(names: &[String], c: usize) -> String {
    names.get(c).cloned().unwrap_or_else(|| format!("#{c}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_fusion::stats::ClassCounts;

    fn single(state: Supervision) -> SupervisionVolume {
        SupervisionVolume::from_parts(1, 1, vec![state], vec![state != Supervision::Ignore]).unwrap()
    }

    fn stats_of(classes: Vec<ClassCounts>, pixels: u64) -> PixelStats {
        PixelStats {
            classes,
            pixels,
            frames: 1,
            subsets: Default::default(),
        }
    }

    fn counts(positive: u64, negative: u64, implied_negative: u64) -> ClassCounts {
        ClassCounts {
            positive,
            negative,
            implied_negative,
            ignore: 0,
        }
    }

    #[test]
    fn positive_pixel_at_zero_logit_is_ln2() {
        let w = PositiveWeights::uniform(1, WeightScheme::Implicit);
        let out = masked_weighted_bce(&[0.0], &[single(Supervision::Pos)], &w).unwrap();
        assert!((out.total - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ignored_class_is_skipped() {
        // two classes, one pixel: class 0 positive, class 1 ignored
        let sup = SupervisionVolume::from_parts(
            1,
            1,
            vec![Supervision::Pos, Supervision::Ignore],
            vec![true, false],
        )
        .unwrap();
        let w = PositiveWeights::uniform(2, WeightScheme::Implicit);
        let (out, grad) = masked_weighted_bce_with_grad(&[0.0, 7.0], &[sup], &w).unwrap();
        assert_eq!(out.classes[1].loss, None);
        assert_eq!(out.classes[1].valid_pixels, 0);
        assert_eq!(out.active_classes(), 1);
        assert!((out.total - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let w = PositiveWeights::uniform(1, WeightScheme::Implicit);
        for z in [-50.0, 50.0, -700.0, 700.0] {
            for s in [Supervision::Pos, Supervision::Neg] {
                let (out, grad) = masked_weighted_bce_with_grad(&[z], &[single(s)], &w).unwrap();
                assert!(out.total.is_finite() && grad[0].is_finite(), "z={z} {s:?}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let w = PositiveWeights::uniform(1, WeightScheme::Implicit);
        assert!(matches!(
            masked_weighted_bce(&[0.0, 1.0], &[single(Supervision::Pos)], &w),
            Err(Error::ShapeMismatch(_))
        ));
        let w2 = PositiveWeights::uniform(2, WeightScheme::Implicit);
        assert!(matches!(
            masked_weighted_bce(&[0.0], &[single(Supervision::Pos)], &w2),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn il_weights() {
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let s = stats_of(
            vec![counts(10, 20, 10), counts(5, 5, 0), counts(1, 100_000_000, 0)],
            0,
        );
        let w = pos_weight_il(&s, &names).unwrap();
        assert_eq!(w.weights, vec![3.0, 1.0, 1e4]);

        let s = stats_of(vec![counts(0, 3, 0)], 0);
        assert!(matches!(pos_weight_il(&s, &names), Err(Error::NoPositives(n)) if n == "a"));
    }

    #[test]
    fn en_weights() {
        let s = stats_of(vec![counts(25, 75, 0)], 100);
        let w = pos_weight_en(&s, 0, "a").unwrap();
        assert_eq!(w.weights, vec![3.0]);
        assert_eq!(w.background, Some(1.0));
        let s = stats_of(vec![counts(0, 75, 0)], 75);
        assert!(matches!(pos_weight_en(&s, 0, "a"), Err(Error::NoPositives(_))));
    }

    #[test]
    fn fs_weights() {
        // shares 0.1 and 0.3; softmax(-0.1, -0.3), evaluated directly
        let s = stats_of(vec![counts(10, 90, 0), counts(30, 70, 0)], 100);
        let w = pos_weight_fs(&s, false).unwrap();
        let e1 = (-0.1f64).exp();
        let e2 = (-0.3f64).exp();
        assert!((w.weights[0] - e1 / (e1 + e2)).abs() < 1e-12);
        assert!((w.weights[0] - 0.5498).abs() < 1e-4);
        assert!((w.weights[1] - 0.4502).abs() < 1e-4);

        let eq = stats_of(vec![counts(10, 90, 0); 4], 100);
        for v in pos_weight_fs(&eq, false).unwrap().weights {
            assert!((v - 0.25).abs() < 1e-12);
        }

        let with_bg = pos_weight_fs(&s, true).unwrap();
        assert_eq!(with_bg.weights.len(), 3);
        assert!((with_bg.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut partial = s.clone();
        partial.classes[0].ignore = 1;
        assert!(matches!(pos_weight_fs(&partial, false), Err(Error::NotFullyLabeled(_))));
    }
}
