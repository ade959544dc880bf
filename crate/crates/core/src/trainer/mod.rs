//! Training of the implicit-labeling model, its masking-only ablation, the
//! fully supervised baseline and one-class ensemble members.

pub mod optim;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_fusion::batch::{BatchIter, BatchMode, Sample};
use crate::data_fusion::manifest::{DatasetManifest, LoadedFrame, Split};
use crate::data_fusion::stats::PixelStats;
use crate::error::{Error, Result};
use crate::evaluation::{argmax_decode, dice_image, GroundTruth};
use crate::label_algebra::{derive_supervision, ClassCatalog, SupervisionVolume};
use crate::loss::{
    masked_weighted_bce_with_grad, pos_weight_en, pos_weight_fs, pos_weight_il, PositiveWeights,
};
use crate::model::{Checkpoint, EnsembleBundle, ModelKind, SegmentationModel, Tensor, TinyConfig, TinyEncoderDecoder};

pub use optim::{AdamW, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trial {
    /// One model, implied negatives plus masking.
    #[serde(rename = "il")]
    Il,
    /// One single-class model per subset, merged at inference.
    #[serde(rename = "en")]
    En,
    /// One model on fully labeled data.
    #[serde(rename = "fs")]
    Fs,
    /// Masking of unknown pixels without implied negatives.
    #[serde(rename = "il-maskonly")]
    IlMaskOnly,
}

impl Trial {
    pub fn as_str(&self) -> &'static str {
        match self {
            Trial::Il => "il",
            Trial::En => "en",
            Trial::Fs => "fs",
            Trial::IlMaskOnly => "il-maskonly",
        }
    }
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Trial {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "il" => Ok(Trial::Il),
            "en" => Ok(Trial::En),
            "fs" => Ok(Trial::Fs),
            "il-maskonly" | "il-mask-only" => Ok(Trial::IlMaskOnly),
            other => Err(Error::ConfigError(format!("unknown trial `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub trial: Trial,
    pub epochs: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Decode threshold used for validation dice.
    pub tau: f64,
    pub model: TinyConfig,
    pub batch_mode: BatchMode,
    /// FS only: train an explicit background channel.
    pub fs_background_channel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trial: Trial::Il,
            epochs: 30,
            learning_rate: 3e-4,
            gamma: 0.9,
            step_size: 10,
            weight_decay: 0.1,
            batch_size: 8,
            seed: 0,
            tau: 0.5,
            model: TinyConfig::default(),
            batch_mode: BatchMode::Mixed,
            fs_background_channel: true,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 100 epochs.
    pub fn full_scale(trial: Trial) -> Self {
        TrainConfig {
            trial,
            epochs: 100,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ConfigError("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigError("learning rate must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::ConfigError("gamma must lie in (0, 1]".into()));
        }
        if self.step_size == 0 {
            return Err(Error::ConfigError("scheduler step size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::ConfigError("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigError("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::ConfigError("tau must lie in [0, 1]".into()));
        }
        self.model.validate()
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.learning_rate,
            gamma: self.gamma,
            step_size: self.step_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trial: Trial,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_class: Option<String>,
    pub seed: u64,
    pub positive_weights: PositiveWeights,
    pub train_frames: usize,
    pub val_frames: usize,
    pub epochs: Vec<EpochRecord>,
    /// Zero-based epoch with the highest validation dice; ties keep the
    /// earliest.
    pub selected_epoch: usize,
    pub best_val_mean_dice: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Supervision seen by the loss for one frame under a given trial.
pub fn trial_supervision(
    trial: Trial,
    frame: &LoadedFrame,
    catalog: &ClassCatalog,
    fs_background_channel: bool,
    member_class: Option<usize>,
) -> Result<SupervisionVolume> {
    let volume = derive_supervision(&frame.frame, catalog)?;
    match trial {
        Trial::Il => Ok(volume),
        Trial::IlMaskOnly => Ok(volume.without_implied_negatives()),
        Trial::Fs => {
            if let Some(c) = (0..catalog.len()).find(|&c| !frame.frame.is_annotated(c)) {
                return Err(Error::NotFullyLabeled(format!(
                    "frame `{}` of subset `{}` has no mask for `{}`",
                    frame.id,
                    frame.subset,
                    catalog.name(c)
                )));
            }
            if fs_background_channel {
                volume.with_background_channel()
            } else {
                Ok(volume)
            }
        }
        Trial::En => {
            let c = member_class
                .ok_or_else(|| Error::ConfigError("ensemble members need a class".into()))?;
            Ok(volume.select_channel(c))
        }
    }
}

/// Validation frame plus where its dice gets pooled.
struct ValFrame {
    subset: String,
    image: Tensor,
    gt: GroundTruth,
}

/// How model outputs are decoded and scored during validation.
#[derive(Debug, Clone, Copy)]
struct Decoding {
    background_channel: bool,
    /// For a one-class member: the catalog class its channel 0 stands for.
    member_class: Option<usize>,
}

fn validation_score<M: SegmentationModel>(
    model: &M,
    frames: &[ValFrame],
    tau: f64,
    decoding: Decoding,
) -> Result<f64> {
    let maps = frames
        .par_iter()
        .map(|f| {
            let probs = model.forward_one(&f.image)?.sigmoid();
            argmax_decode(&probs, tau, decoding.background_channel)
        })
        .collect::<Result<Vec<_>>>()?;

    // subset -> class -> per-image dice, in first-seen order
    let mut pooled: Vec<(String, Vec<(usize, Vec<f64>)>)> = Vec::new();
    for (f, map) in frames.iter().zip(&maps) {
        let idx = match pooled.iter().position(|(s, _)| *s == f.subset) {
            Some(i) => i,
            None => {
                pooled.push((f.subset.clone(), Vec::new()));
                pooled.len() - 1
            }
        };
        for (&class, mask) in &f.gt.masks {
            let predicted_id = match decoding.member_class {
                Some(member) if member == class => 0,
                Some(_) => continue,
                None => class,
            };
            let d = dice_image(map, mask, predicted_id)?;
            let classes = &mut pooled[idx].1;
            match classes.iter_mut().find(|(c, _)| *c == class) {
                Some((_, v)) => v.push(d),
                None => classes.push((class, vec![d])),
            }
        }
    }
    let subset_scores: Vec<f64> = pooled
        .iter()
        .filter(|(_, classes)| !classes.is_empty())
        .map(|(_, classes)| {
            classes
                .iter()
                .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
                .sum::<f64>()
                / classes.len() as f64
        })
        .collect();
    if subset_scores.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    Ok(subset_scores.iter().sum::<f64>() / subset_scores.len() as f64)
}

/// Gradient of the batch loss with respect to the parameters.
fn batch_gradient<M: SegmentationModel>(
    model: &M,
    images: &Tensor,
    supervision: &[SupervisionVolume],
    weights: &PositiveWeights,
) -> Result<(f64, Vec<f32>)> {
    let forwards = (0..images.batch)
        .into_par_iter()
        .map(|b| model.forward_train(&images.item_tensor(b)))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = forwards
        .iter()
        .flat_map(|(out, _)| out.data.iter().map(|&v| f64::from(v)))
        .collect();
    let (loss, grad) = masked_weighted_bce_with_grad(&logits, supervision, weights)?;
    let item = model.out_channels() * images.pixels();
    let per_item: Vec<Vec<f32>> = forwards
        .par_iter()
        .enumerate()
        .map(|(b, (_, cache))| {
            let g: Vec<f32> = grad[b * item..(b + 1) * item].iter().map(|&v| v as f32).collect();
            model.backward(cache, &g)
        })
        .collect();
    // fixed summation order keeps training bit-reproducible
    let mut total = vec![0.0f32; model.params().len()];
    for g in per_item {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    Ok((loss.total, total))
}

struct Prepared {
    train: Vec<Sample>,
    val: Vec<ValFrame>,
    weights: PositiveWeights,
    out_channels: usize,
    decoding: Decoding,
}

fn prepare(
    config: &TrainConfig,
    catalog: &ClassCatalog,
    train: &[LoadedFrame],
    val: &[LoadedFrame],
    member_class: Option<usize>,
) -> Result<Prepared> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let trial = config.trial;
    let fs_bg = config.fs_background_channel;
    let samples = train
        .iter()
        .map(|f| {
            Ok(Sample {
                subset: f.subset.clone(),
                id: f.id.clone(),
                image: Tensor::from_image(&f.frame.image),
                supervision: trial_supervision(trial, f, catalog, fs_bg, member_class)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let channels = samples[0].supervision.channels();
    let stats = PixelStats::from_volumes(
        channels,
        samples.iter().map(|s| (s.subset.as_str(), &s.supervision)),
    );
    let weights = match trial {
        Trial::Il | Trial::IlMaskOnly => pos_weight_il(&stats, catalog.names())?,
        // a background channel is already one of the supervised channels
        Trial::Fs => pos_weight_fs(&stats, false)?,
        Trial::En => {
            let c = member_class.expect("member class set for EN");
            pos_weight_en(&stats, 0, catalog.name(c))?
        }
    };

    if trial == Trial::Fs {
        // validation frames must be fully labeled too
        for f in val {
            trial_supervision(trial, f, catalog, fs_bg, None)?;
        }
    }
    let val = val
        .iter()
        .map(|f| ValFrame {
            subset: f.subset.clone(),
            image: Tensor::from_image(&f.frame.image),
            gt: GroundTruth::from_frame(&f.frame),
        })
        .collect();

    Ok(Prepared {
        train: samples,
        val,
        weights,
        out_channels: channels,
        decoding: Decoding {
            background_channel: trial == Trial::Fs && fs_bg,
            member_class,
        },
    })
}

fn run_training(
    config: &TrainConfig,
    prepared: Prepared,
    init_seed: u64,
    member_name: Option<String>,
) -> Result<(TrainReport, TinyEncoderDecoder)> {
    let mut model = TinyEncoderDecoder::new(config.model, prepared.out_channels, init_seed)?;
    let mut optimizer = AdamW::new(model.params().len(), config.weight_decay);
    let schedule = config.schedule();

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f32>)> = None;
    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        let batches = BatchIter::new(
            &prepared.train,
            config.batch_size,
            config.seed,
            epoch as u64,
            config.batch_mode,
        )?;
        for batch in batches {
            let (loss, grads) =
                batch_gradient(&model, &batch.images, &batch.supervision, &prepared.weights)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: steps,
                    detail: format!("loss {loss}, frames {:?}", batch.ids),
                });
            }
            optimizer.step(model.params_mut(), &grads, lr);
            loss_sum += loss;
            steps += 1;
        }
        let val = validation_score(&model, &prepared.val, config.tau, prepared.decoding)?;
        epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / steps as f64,
            val_mean_dice: val,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val > *b) {
            best = Some((epoch, val, model.params().to_vec()));
        }
    }

    let (selected_epoch, best_val, params) = best.expect("at least one epoch");
    model.params_mut().copy_from_slice(&params);
    let report = TrainReport {
        trial: config.trial,
        member_class: member_name,
        seed: config.seed,
        positive_weights: prepared.weights,
        train_frames: prepared.train.len(),
        val_frames: prepared.val.len(),
        epochs,
        selected_epoch,
        best_val_mean_dice: best_val,
        checkpoint: None,
    };
    Ok((report, model))
}

/// Trains an IL, IL-mask-only or FS model on every subset of the manifest
/// and returns the best-validation checkpoint.
pub fn train(config: &TrainConfig, manifest: &DatasetManifest) -> Result<(TrainReport, Checkpoint)> {
    let train = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Val)?;
    train_frames(config, &manifest.catalog, &train, &val)
}

/// Like [`train`] on frames already in memory.
pub fn train_frames(
    config: &TrainConfig,
    catalog: &ClassCatalog,
    train: &[LoadedFrame],
    val: &[LoadedFrame],
) -> Result<(TrainReport, Checkpoint)> {
    config.validate()?;
    if config.trial == Trial::En {
        return Err(Error::ConfigError(
            "ensemble trials train one member per class; use train_ensemble".into(),
        ));
    }
    let prepared = prepare(config, catalog, train, val, None)?;
    let background_channel = prepared.decoding.background_channel;
    let (report, model) = run_training(config, prepared, config.seed, None)?;
    Ok((
        report,
        Checkpoint {
            kind: ModelKind {
                trial: config.trial,
                member_class: None,
                background_channel,
            },
            model,
        },
    ))
}

/// Name of the subset that annotates exactly `class`.
pub fn member_subset(manifest: &DatasetManifest, class: &str) -> Result<String> {
    manifest
        .subsets
        .iter()
        .find(|s| s.annotated_classes.len() == 1 && s.annotated_classes[0] == class)
        .map(|s| s.name.clone())
        .ok_or_else(|| Error::MissingSubset(class.to_string()))
}

pub struct EnsembleTraining {
    pub bundle: EnsembleBundle<TinyEncoderDecoder>,
    pub reports: Vec<TrainReport>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Trains one single-output member per catalog class, each only on the
/// train and val frames of its own binary subset.
pub fn train_ensemble(config: &TrainConfig, manifest: &DatasetManifest) -> Result<EnsembleTraining> {
    let train = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Val)?;
    let subsets = manifest
        .catalog
        .names()
        .iter()
        .map(|c| member_subset(manifest, c))
        .collect::<Result<Vec<_>>>()?;
    train_ensemble_frames(config, &manifest.catalog, &subsets, &train, &val)
}

/// Like [`train_ensemble`] on frames already in memory; `member_subsets[c]`
/// names the subset member `c` trains on.
pub fn train_ensemble_frames(
    config: &TrainConfig,
    catalog: &ClassCatalog,
    member_subsets: &[String],
    train: &[LoadedFrame],
    val: &[LoadedFrame],
) -> Result<EnsembleTraining> {
    let config = TrainConfig {
        trial: Trial::En,
        ..config.clone()
    };
    config.validate()?;
    let mut members = Vec::with_capacity(catalog.len());
    let mut reports = Vec::with_capacity(catalog.len());
    let mut checkpoints = Vec::with_capacity(catalog.len());
    for (class, subset) in member_subsets.iter().enumerate() {
        let own = |frames: &[LoadedFrame]| -> Vec<LoadedFrame> {
            frames.iter().filter(|f| &f.subset == subset).cloned().collect()
        };
        let (t, v) = (own(train), own(val));
        if t.is_empty() {
            return Err(Error::MissingSubset(catalog.name(class).to_string()));
        }
        let prepared = prepare(&config, catalog, &t, &v, Some(class))?;
        let init_seed = config.seed.wrapping_add(1 + class as u64);
        let (report, model) =
            run_training(&config, prepared, init_seed, Some(catalog.name(class).to_string()))?;
        checkpoints.push(Checkpoint {
            kind: ModelKind {
                trial: Trial::En,
                member_class: Some(class),
                background_channel: false,
            },
            model: model.clone(),
        });
        members.push((class, model));
        reports.push(report);
    }
    Ok(EnsembleTraining {
        bundle: EnsembleBundle::new(catalog, members)?,
        reports,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_fusion::manifest::{split_full_to_binary, SplitMode};
    use crate::data_fusion::synth::{synth_frames, SynthConfig};
    use crate::label_algebra::Supervision;

    fn frames(cfg: &SynthConfig) -> Vec<LoadedFrame> {
        synth_frames(cfg)
            .unwrap()
            .into_iter()
            .map(|f| LoadedFrame {
                subset: "full".into(),
                id: f.id,
                split: f.split,
                frame: f.frame,
            })
            .collect()
    }

    fn tiny_config(trial: Trial) -> TrainConfig {
        TrainConfig {
            trial,
            epochs: 2,
            batch_size: 4,
            learning_rate: 3e-3,
            model: TinyConfig { depth: 2, base_width: 4 },
            ..Default::default()
        }
    }

    fn small_synth() -> SynthConfig {
        SynthConfig {
            n_train: 8,
            n_val: 4,
            n_test: 1,
            height: 32,
            width: 32,
            classes: vec!["A".into(), "B".into(), "C".into()],
            confusable_pairs: vec![],
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::full_scale(Trial::Il).epochs, 100);
        assert_eq!("il-maskonly".parse::<Trial>().unwrap(), Trial::IlMaskOnly);
        assert!("xx".parse::<Trial>().is_err());
    }

    #[test]
    fn il_on_full_data_matches_fs_without_background() {
        let cfg = small_synth();
        let cat = cfg.validate().unwrap();
        for f in frames(&cfg) {
            let il = trial_supervision(Trial::Il, &f, &cat, false, None).unwrap();
            let fs = trial_supervision(Trial::Fs, &f, &cat, false, None).unwrap();
            assert_eq!(il, fs);
            assert_eq!(il.count(Supervision::Ignore), 0);
        }
    }

    #[test]
    fn training_is_deterministic_and_selects_best_epoch() {
        let cfg = small_synth();
        let cat = cfg.validate().unwrap();
        let all = frames(&cfg);
        let train: Vec<_> = all.iter().filter(|f| f.split == Split::Train).cloned().collect();
        let val: Vec<_> = all.iter().filter(|f| f.split == Split::Val).cloned().collect();
        let tc = tiny_config(Trial::Il);
        let (r1, c1) = train_frames(&tc, &cat, &train, &val).unwrap();
        let (r2, c2) = train_frames(&tc, &cat, &train, &val).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(c1.model, c2.model);
        let best = r1
            .epochs
            .iter()
            .map(|e| e.val_mean_dice)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r1.best_val_mean_dice, best);
        assert_eq!(r1.epochs[r1.selected_epoch].val_mean_dice, best);
        assert!(r1.epochs.iter().all(|e| e.train_loss.is_finite()));
        assert!(matches!(
            train_frames(&tiny_config(Trial::En), &cat, &train, &val),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn fs_requires_full_labels_and_adds_background() {
        let cfg = small_synth();
        let cat = cfg.validate().unwrap();
        let all = frames(&cfg);
        let train: Vec<_> = all.iter().filter(|f| f.split == Split::Train).cloned().collect();
        let val: Vec<_> = all.iter().filter(|f| f.split == Split::Val).cloned().collect();
        let (report, ck) = train_frames(&tiny_config(Trial::Fs), &cat, &train, &val).unwrap();
        assert!(ck.kind.background_channel);
        use crate::model::SegmentationModel;
        assert_eq!(ck.model.out_channels(), 4);
        assert!((report.positive_weights.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let partial: Vec<_> = train.iter().map(|f| LoadedFrame {
            frame: f.frame.restricted_to(&[0]),
            ..f.clone()
        }).collect();
        assert!(matches!(
            train_frames(&tiny_config(Trial::Fs), &cat, &partial, &val),
            Err(Error::NotFullyLabeled(_))
        ));
    }

    #[test]
    fn ensemble_members_see_only_their_subset() {
        let cfg = small_synth();
        let cat = cfg.validate().unwrap();
        let all = frames(&cfg);
        // emulate a partitioned binary split in memory
        let manifest_like = |f: &LoadedFrame, i: usize| {
            let c = i % 3;
            LoadedFrame {
                subset: cat.name(c).to_string(),
                frame: f.frame.restricted_to(&[c]),
                ..f.clone()
            }
        };
        let train: Vec<_> = all.iter().filter(|f| f.split == Split::Train).enumerate().map(|(i, f)| manifest_like(f, i)).collect();
        let val: Vec<_> = all.iter().filter(|f| f.split == Split::Val).enumerate().map(|(i, f)| manifest_like(f, i)).collect();
        let subsets: Vec<String> = cat.names().to_vec();
        let out = train_ensemble_frames(&tiny_config(Trial::En), &cat, &subsets, &train, &val).unwrap();
        assert_eq!(out.bundle.len(), 3);
        for (c, r) in out.reports.iter().enumerate() {
            let expected = train.iter().filter(|f| f.subset == subsets[c]).count();
            assert_eq!(r.train_frames, expected);
            assert_eq!(r.member_class.as_deref(), Some(cat.name(c)));
            assert_eq!(r.positive_weights.background, Some(1.0));
        }
        let _ = split_full_to_binary;
        let _ = SplitMode::Partition;
    }
}
