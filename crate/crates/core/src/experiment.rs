//! Desk-scale comparison of implicit labeling against a per-class ensemble
//! and the masking-only ablation on a synthetic dataset split into binary
//! subsets.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_fusion::manifest::{split_full_to_binary, DatasetManifest, Split, SplitMode};
use crate::data_fusion::synth::{synth_generate, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::report::MEAN_TARGET;
use crate::evaluation::{build_report, wilcoxon_signed_rank, WilcoxonResult, GroundTruth, MetricsReport, Predictor, TrialPredictions};
use crate::model::Tensor;
use crate::trainer::{train, train_ensemble, TrainConfig, TrainReport, Trial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    pub split_mode: SplitMode,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub tau: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SynthConfig::default(),
            split_mode: SplitMode::Partition,
            // a network trained from scratch for 30 epochs needs a larger
            // step than the 3e-4 default
            train: TrainConfig {
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            tau: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub il_mean_dice: f64,
    pub en_mean_dice: f64,
    pub mask_only_mean_dice: f64,
    /// Pooled (image, class) test of IL against EN.
    pub il_vs_en_p: Option<f64>,
    pub il_vs_mask_only_p: Option<f64>,
    /// Row-normalised confusion between the first confusable pair, averaged
    /// over both directions.
    pub il_pair_confusion: Option<f64>,
    pub en_pair_confusion: Option<f64>,
    pub mask_only_pair_confusion: Option<f64>,
    pub seconds: f64,
    pub report: MetricsReport,
    pub train_reports: Vec<TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedOutcome>,
    /// IL against EN over every (seed, image, class) pair.
    pub pooled_il_vs_en: Option<WilcoxonResult>,
    pub seconds: f64,
}

impl ExperimentOutcome {
    /// Seeds in which `pred` holds.
    pub fn count(&self, pred: impl Fn(&SeedOutcome) -> bool) -> usize {
        self.seeds.iter().filter(|s| pred(s)).count()
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("seed  IL     EN     IL-mask  p(IL,EN)   conf IL  conf EN   secs\n");
        for o in &self.seeds {
            let fmt_opt = |v: Option<f64>, prec: usize| {
                v.map_or("-".to_string(), |x| format!("{x:.prec$}"))
            };
            s.push_str(&format!(
                "{:<5} {:.3}  {:.3}  {:.3}    {:<10} {:<8} {:<8}  {:.0}\n",
                o.seed,
                o.il_mean_dice,
                o.en_mean_dice,
                o.mask_only_mean_dice,
                o.il_vs_en_p.map_or("-".to_string(), |p| format!("{p:.2e}")),
                fmt_opt(o.il_pair_confusion, 4),
                fmt_opt(o.en_pair_confusion, 4),
                o.seconds
            ));
        }
        if let Some(w) = &self.pooled_il_vs_en {
            s.push_str(&format!("pooled IL vs EN: n {} p {:.2e}\n", w.n, w.p_value));
        }
        s.push_str(&format!("total {:.0}s\n", self.seconds));
        s
    }
}

/// Generates the dataset under `workdir` (fully labeled plus binary
/// manifests) and returns both.
pub fn prepare_data(config: &ExperimentConfig, workdir: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    let full = synth_generate(&config.data, &workdir.join("data"))?;
    full.save(&workdir.join("data").join("manifest_full.json"))?;
    let binary = split_full_to_binary(&full, config.split_mode)?;
    binary.save(&workdir.join("data").join("manifest.json"))?;
    Ok((full, binary))
}

/// Trains IL, EN and IL-mask-only on the binary subsets for every seed and
/// scores them on the fully labeled test split.
pub fn run_experiment(config: &ExperimentConfig, workdir: &Path) -> Result<ExperimentOutcome> {
    if config.seeds.is_empty() {
        return Err(Error::ConfigError("experiment needs at least one seed".into()));
    }
    let start = Instant::now();
    let (full, binary) = prepare_data(config, workdir)?;
    let catalog = &full.catalog;
    let test = full.load_split(Split::Test)?;
    let images: Vec<Tensor> = test.iter().map(|f| Tensor::from_image(&f.frame.image)).collect();
    let gts: Vec<GroundTruth> = test.iter().map(|f| GroundTruth::from_frame(&f.frame)).collect();
    let pair = match config.data.confusable_pairs.first() {
        Some((a, b)) => Some((catalog.index_of(a)?, catalog.index_of(b)?)),
        None => None,
    };

    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let t = Instant::now();
        let base = TrainConfig { seed, ..config.train.clone() };
        let (il_report, il) = train(&TrainConfig { trial: Trial::Il, ..base.clone() }, &binary)?;
        let (mo_report, mo) = train(&TrainConfig { trial: Trial::IlMaskOnly, ..base.clone() }, &binary)?;
        let en = train_ensemble(&TrainConfig { trial: Trial::En, ..base.clone() }, &binary)?;

        let predictions = [
            ("il", Predictor::from_checkpoints(vec![il], catalog)?),
            ("en", Predictor::Ensemble(en.bundle)),
            ("il-maskonly", Predictor::from_checkpoints(vec![mo], catalog)?),
        ]
        .into_iter()
        .map(|(name, p)| {
            Ok(TrialPredictions {
                name: name.to_string(),
                maps: p.predict_all(&images, config.tau)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
        let report = build_report(
            &predictions,
            &gts,
            catalog,
            &[("il".into(), "en".into()), ("il".into(), "il-maskonly".into())],
        )?;

        let mean = |name: &str| report.trial(name).map(|t| t.mean_dice).unwrap_or(f64::NAN);
        let p_mean = |other: &str| {
            report.significance.as_ref().and_then(|sig| {
                sig.iter()
                    .find(|e| e.pair[1] == other && e.target == MEAN_TARGET)
                    .and_then(|e| e.p_value)
            })
        };
        let confusion = |name: &str| {
            let (a, b) = pair?;
            Some(report.trial(name)?.confusion.pair_confusion(a, b))
        };
        let mut train_reports = vec![il_report, mo_report];
        train_reports.extend(en.reports);
        seeds.push(SeedOutcome {
            seed,
            il_mean_dice: mean("il"),
            en_mean_dice: mean("en"),
            mask_only_mean_dice: mean("il-maskonly"),
            il_vs_en_p: p_mean("en"),
            il_vs_mask_only_p: p_mean("il-maskonly"),
            il_pair_confusion: confusion("il"),
            en_pair_confusion: confusion("en"),
            mask_only_pair_confusion: confusion("il-maskonly"),
            seconds: t.elapsed().as_secs_f64(),
            report,
            train_reports,
        });
    }
    let pooled = |name: &str| -> Vec<f64> {
        seeds
            .iter()
            .flat_map(|s| s.report.trial(name).map(|t| t.pooled_dice()).unwrap_or_default())
            .collect()
    };
    Ok(ExperimentOutcome {
        pooled_il_vs_en: wilcoxon_signed_rank(&pooled("il"), &pooled("en")).ok(),
        seeds,
        seconds: start.elapsed().as_secs_f64(),
    })
}
