//! Independent reference implementations used as test oracles. They favour
//! the most literal reading of each rule over speed.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use complseg::grid::{Grid, Mask};
use complseg::label_algebra::{AnnotationFrame, Supervision};
use rand::Rng;

/// Naive `ln(1 + e^x)`; callers keep |x| small enough not to overflow.
pub fn naive_softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// One labelled logit: (batch item, class, pixel, logit, state).
pub struct LossCase {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub logits: Vec<f64>,
    pub states: Vec<Vec<Supervision>>,
    pub weights: Vec<f64>,
}

impl LossCase {
    pub fn random(rng: &mut impl Rng) -> Self {
        let batch = rng.gen_range(1..=3);
        let channels = rng.gen_range(1..=3);
        let height = rng.gen_range(1..=4);
        let width = rng.gen_range(1..=4);
        let n = channels * height * width;
        let logits = (0..batch * n).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let states = (0..batch)
            .map(|_| {
                (0..n)
                    .map(|_| match rng.gen_range(0..3) {
                        0 => Supervision::Pos,
                        1 => Supervision::Neg,
                        _ => Supervision::Ignore,
                    })
                    .collect()
            })
            .collect();
        let weights = (0..channels).map(|_| rng.gen_range(0.1..20.0)).collect();
        LossCase {
            batch,
            channels,
            height,
            width,
            logits,
            states,
            weights,
        }
    }

    /// Reference loss: for each class, the weighted BCE summed over every
    /// non-ignored (item, pixel), divided by the batch size and by the
    /// non-ignored count; then the mean over classes that have any.
    pub fn reference_loss(&self) -> Option<f64> {
        let hw = self.height * self.width;
        let mut per_class = Vec::new();
        for c in 0..self.channels {
            let mut sum = 0.0;
            let mut valid = 0usize;
            for b in 0..self.batch {
                for p in 0..hw {
                    let idx = c * hw + p;
                    let z = self.logits[b * self.channels * hw + idx];
                    let prob = 1.0 / (1.0 + (-z).exp());
                    let term = match self.states[b][idx] {
                        Supervision::Pos => -self.weights[c] * prob.ln(),
                        Supervision::Neg => -(1.0 - prob).ln(),
                        Supervision::Ignore => continue,
                    };
                    sum += term;
                    valid += 1;
                }
            }
            if valid > 0 {
                per_class.push(sum / self.batch as f64 / valid as f64);
            }
        }
        if per_class.is_empty() {
            None
        } else {
            Some(per_class.iter().sum::<f64>() / per_class.len() as f64)
        }
    }
}

/// Reference implication rules, one pixel and class at a time.
///
/// `owner[p]` is the true class of pixel `p` (`None` = background), and
/// `annotated` the classes the frame carries masks for.
pub fn reference_state(owner: &[Option<usize>], annotated: &BTreeSet<usize>, class: usize, p: usize) -> Supervision {
    // an annotated class knows its own positives and negatives
    if annotated.contains(&class) {
        return if owner[p] == Some(class) {
            Supervision::Pos
        } else {
            Supervision::Neg
        };
    }
    // rule 1: a visible positive of another class rules this class out
    if let Some(other) = owner[p] {
        if other != class && annotated.contains(&other) {
            return Supervision::Neg;
        }
    }
    // rule 2: nothing is known
    Supervision::Ignore
}

pub fn frame_from_owner(owner: &[Option<usize>], annotated: &BTreeSet<usize>, h: usize, w: usize) -> AnnotationFrame {
    let masks: BTreeMap<usize, Mask> = annotated
        .iter()
        .map(|&c| (c, Grid::from_vec(h, w, owner.iter().map(|o| *o == Some(c)).collect()).unwrap()))
        .collect();
    AnnotationFrame::new(Grid::filled(h, w, [0, 0, 0]), masks)
}

/// Set-based dice with the empty-empty convention.
pub fn set_dice(pred: &BTreeSet<usize>, gt: &BTreeSet<usize>) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let inter = pred.intersection(gt).count();
    2.0 * inter as f64 / (pred.len() + gt.len()) as f64
}

/// Average ranks by counting: rank = (#smaller) + (#equal + 1) / 2.
pub fn naive_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let smaller = values.iter().filter(|x| *x < v).count() as f64;
            let equal = values.iter().filter(|x| *x == v).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided p-value by enumerating every sign assignment of the ranks of
/// the non-zero differences.
pub fn enumerated_wilcoxon_p(a: &[f64], b: &[f64]) -> Option<f64> {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return None;
    }
    let ranks = naive_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let observed: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    Some((2.0 * le.min(ge) as f64 / total).min(1.0))
}
