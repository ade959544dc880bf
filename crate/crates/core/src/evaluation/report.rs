use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    confusion_matrix, dice_class_average, dice_image, mean_dice, wilcoxon_signed_rank,
    ConfusionMatrix, GroundTruth, SegmentationMap,
};
use crate::grid::{Grid, RgbImage};
use crate::label_algebra::ClassCatalog;

/// Decoded test-set predictions of one trial, aligned with the ground truth.
#[derive(Debug, Clone)]
pub struct TrialPredictions {
    pub name: String,
    pub maps: Vec<SegmentationMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDice {
    pub class: String,
    /// Indices of the evaluation frames the class is annotated on.
    pub frames: Vec<usize>,
    pub per_image: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub name: String,
    pub per_class: Vec<ClassDice>,
    pub mean_dice: f64,
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
}

impl TrialMetrics {
    pub fn class(&self, name: &str) -> Option<&ClassDice> {
        self.per_class.iter().find(|c| c.class == name)
    }

    /// Every (image, class) dice in class order, the pooled sample of the
    /// mean-dice significance test.
    pub fn pooled_dice(&self) -> Vec<f64> {
        self.per_class.iter().flat_map(|c| c.per_image.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignificanceLevel {
    /// p < 0.01
    Strong,
    /// p < 0.05
    Significant,
    NotSignificant,
    /// Too few non-zero differences to run the test.
    Untestable,
}

impl SignificanceLevel {
    pub fn from_p(p: f64) -> Self {
        if p < 0.01 {
            SignificanceLevel::Strong
        } else if p < 0.05 {
            SignificanceLevel::Significant
        } else {
            SignificanceLevel::NotSignificant
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub pair: [String; 2],
    /// Class name, or `mean` for the pooled test over all (image, class) pairs.
    pub target: String,
    pub n: usize,
    pub p_value: Option<f64>,
    pub level: SignificanceLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Classes in report order; `background` is last when included.
    pub classes: Vec<String>,
    pub frames: usize,
    pub trials: Vec<TrialMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<Vec<SignificanceEntry>>,
}

pub const MEAN_TARGET: &str = "mean";

impl MetricsReport {
    pub fn trial(&self, name: &str) -> Option<&TrialMetrics> {
        self.trials.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Dice table with one row per trial, plus a significance table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "| trial |");
        for c in &self.classes {
            let _ = write!(s, " {c} |");
        }
        s.push_str(" mean |\n|---|");
        for _ in 0..=self.classes.len() {
            s.push_str("---|");
        }
        s.push('\n');
        for t in &self.trials {
            let _ = write!(s, "| {} |", t.name);
            for c in &t.per_class {
                let _ = write!(s, " {:.3} |", c.average);
            }
            let _ = writeln!(s, " {:.3} |", t.mean_dice);
        }
        if let Some(sig) = &self.significance {
            s.push_str("\n| comparison | target | n | p | level |\n|---|---|---|---|---|\n");
            for e in sig {
                let p = e.p_value.map_or("-".to_string(), |p| format!("{p:.3e}"));
                let _ = writeln!(
                    s,
                    "| {} vs {} | {} | {} | {} | {:?} |",
                    e.pair[0], e.pair[1], e.target, e.n, p, e.level
                );
            }
        }
        s
    }
}

fn trial_metrics(
    pred: &TrialPredictions,
    gts: &[GroundTruth],
    catalog: &ClassCatalog,
    include_background: bool,
) -> Result<TrialMetrics> {
    if pred.maps.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "trial `{}` has {} predictions for {} frames",
            pred.name,
            pred.maps.len(),
            gts.len()
        )));
    }
    let n = catalog.len();
    let mut per_class = Vec::with_capacity(n + 1);
    for c in 0..n {
        let mut frames = Vec::new();
        let mut per_image = Vec::new();
        for (i, (map, gt)) in pred.maps.iter().zip(gts).enumerate() {
            if let Some(mask) = gt.masks.get(&c) {
                frames.push(i);
                per_image.push(dice_image(map, mask, c)?);
            }
        }
        let average = dice_class_average(&per_image).map_err(|_| {
            Error::EmptyInput(format!("no evaluation frame is annotated for `{}`", catalog.name(c)))
        })?;
        per_class.push(ClassDice {
            class: catalog.name(c).to_string(),
            frames,
            per_image,
            average,
        });
    }
    if include_background {
        let mut per_image = Vec::with_capacity(gts.len());
        for (map, gt) in pred.maps.iter().zip(gts) {
            let mask = gt.background_mask(n).expect("checked fully labeled");
            per_image.push(dice_image(map, &mask, catalog.background_id())?);
        }
        per_class.push(ClassDice {
            class: catalog.name(catalog.background_id()).to_string(),
            frames: (0..gts.len()).collect(),
            average: dice_class_average(&per_image)?,
            per_image,
        });
    }
    let averages: Vec<f64> = per_class.iter().map(|c| c.average).collect();
    let confusion = confusion_matrix(&pred.maps, gts, n)?;
    Ok(TrialMetrics {
        name: pred.name.clone(),
        mean_dice: mean_dice(&averages)?,
        confusion_normalized: confusion.row_normalized(),
        confusion,
        per_class,
    })
}

fn significance(a: &TrialMetrics, b: &TrialMetrics) -> Vec<SignificanceEntry> {
    let entry = |target: &str, x: &[f64], y: &[f64]| {
        let pair = [a.name.clone(), b.name.clone()];
        match wilcoxon_signed_rank(x, y) {
            Ok(r) => SignificanceEntry {
                pair,
                target: target.to_string(),
                n: r.n,
                p_value: Some(r.p_value),
                level: SignificanceLevel::from_p(r.p_value),
            },
            Err(_) => SignificanceEntry {
                pair,
                target: target.to_string(),
                n: x.iter().zip(y).filter(|(u, v)| u != v).count(),
                p_value: None,
                level: SignificanceLevel::Untestable,
            },
        }
    };
    let mut out: Vec<SignificanceEntry> = a
        .per_class
        .iter()
        .zip(&b.per_class)
        .map(|(ca, cb)| entry(&ca.class, &ca.per_image, &cb.per_image))
        .collect();
    out.push(entry(MEAN_TARGET, &a.pooled_dice(), &b.pooled_dice()));
    out
}

/// Assembles dice, confusion and significance for every trial. Background
/// is scored as a class when every ground-truth frame is fully labeled.
pub fn build_report(
    trials: &[TrialPredictions],
    gts: &[GroundTruth],
    catalog: &ClassCatalog,
    comparisons: &[(String, String)],
) -> Result<MetricsReport> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("no evaluation frames".into()));
    }
    let include_background = gts.iter().all(|g| g.is_fully_labeled(catalog.len()));
    let metrics = trials
        .iter()
        .map(|t| trial_metrics(t, gts, catalog, include_background))
        .collect::<Result<Vec<_>>>()?;

    let significance = if comparisons.is_empty() {
        None
    } else {
        let find = |name: &str| {
            metrics
                .iter()
                .find(|m| m.name == name)
                .ok_or_else(|| Error::ConfigError(format!("comparison names unknown trial `{name}`")))
        };
        let mut entries = Vec::new();
        for (a, b) in comparisons {
            entries.extend(significance(find(a)?, find(b)?));
        }
        Some(entries)
    };

    let mut classes: Vec<String> = catalog.names().to_vec();
    if include_background {
        classes.push(catalog.name(catalog.background_id()).to_string());
    }
    Ok(MetricsReport {
        classes,
        frames: gts.len(),
        trials: metrics,
        significance,
    })
}

/// Heat map of a row-normalised confusion matrix, `cell` pixels per entry.
pub fn render_confusion(matrix: &ConfusionMatrix, cell: usize) -> RgbImage {
    let n = matrix.size();
    let norm = matrix.row_normalized();
    Grid::from_fn(n * cell, n * cell, |r, c| {
        let v = norm[r / cell][c / cell];
        let shade = (255.0 * (1.0 - v)).round() as u8;
        [shade, shade, 255]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn gt(labels: &[usize], n_classes: usize) -> GroundTruth {
        GroundTruth {
            height: 1,
            width: labels.len(),
            masks: (0..n_classes)
                .map(|c| {
                    (
                        c,
                        Grid::from_vec(1, labels.len(), labels.iter().map(|&l| l == c).collect())
                            .unwrap(),
                    )
                })
                .collect::<BTreeMap<_, _>>(),
        }
    }

    fn map(labels: &[usize]) -> SegmentationMap {
        Grid::from_vec(1, labels.len(), labels.to_vec()).unwrap()
    }

    #[test]
    fn report_is_internally_consistent() {
        let cat = ClassCatalog::new(["a", "b"]).unwrap();
        let gts: Vec<GroundTruth> = (0..6).map(|i| gt(&[0, 1, 2, i % 3], 2)).collect();
        let good = TrialPredictions {
            name: "il".into(),
            maps: (0..6).map(|i| map(&[0, 1, 2, i % 3])).collect(),
        };
        let bad = TrialPredictions {
            name: "en".into(),
            maps: (0..6).map(|i| map(&[1, 1, 2, (i + 1) % 3])).collect(),
        };
        let report = build_report(&[good, bad], &gts, &cat, &[]).unwrap();
        assert!(report.significance.is_none());
        assert_eq!(report.classes, vec!["a", "b", "background"]);
        for t in &report.trials {
            let avg: Vec<f64> = t.per_class.iter().map(|c| c.average).collect();
            assert!((t.mean_dice - avg.iter().sum::<f64>() / avg.len() as f64).abs() < 1e-12);
            assert!(t.pooled_dice().iter().all(|d| (0.0..=1.0).contains(d)));
        }
        assert_eq!(report.trial("il").unwrap().mean_dice, 1.0);

        let with_sig = build_report(
            &[
                TrialPredictions { name: "x".into(), maps: gts.iter().map(|_| map(&[0, 1, 2, 0])).collect() },
                TrialPredictions { name: "y".into(), maps: gts.iter().map(|_| map(&[0, 1, 2, 0])).collect() },
            ],
            &gts,
            &cat,
            &[("x".into(), "y".into())],
        )
        .unwrap();
        let sig = with_sig.significance.unwrap();
        assert_eq!(sig.len(), 4);
        assert!(sig.iter().all(|e| e.level == SignificanceLevel::Untestable));
    }

    #[test]
    fn levels() {
        assert_eq!(SignificanceLevel::from_p(0.009), SignificanceLevel::Strong);
        assert_eq!(SignificanceLevel::from_p(0.01), SignificanceLevel::Significant);
        assert_eq!(SignificanceLevel::from_p(0.049), SignificanceLevel::Significant);
        assert_eq!(SignificanceLevel::from_p(0.05), SignificanceLevel::NotSignificant);
    }
}
