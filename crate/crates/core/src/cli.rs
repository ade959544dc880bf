//! Library side of the `complseg` command line: a root TOML config and one
//! function per subcommand. Values given as flags override the file, which
//! overrides built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::{bench_scaling, BenchConfig, BenchSuite};
use crate::data_fusion::manifest::{load_manifest, split_full_to_binary, Split, SplitMode};
use crate::data_fusion::raster::{read_rgb, write_indexed, write_rgb};
use crate::data_fusion::synth::{synth_generate, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::report::render_confusion;
use crate::evaluation::{build_report, palette, palette_indices, GroundTruth, MetricsReport, Predictor, TrialPredictions};
use crate::grid::Grid;
use crate::label_algebra::ClassCatalog;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Tensor, TinyConfig, TinyEncoderDecoder};
use crate::trainer::{train, train_ensemble, TrainConfig, TrainReport, Trial};

pub const FULL_MANIFEST: &str = "manifest_full.json";
pub const BINARY_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootConfig {
    /// Applies to every section when set.
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub data: SynthConfig,
    pub split: SplitSection,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl RootConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Config file if given, defaults otherwise, then flag overrides.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>, tau: Option<f64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed.or(cfg.seed) {
            cfg.seed = Some(s);
            cfg.data.seed = s;
            cfg.train.seed = s;
            cfg.bench.seed = s;
        }
        if let Some(t) = tau.or(cfg.tau) {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::ConfigError(format!("tau {t} outside [0, 1]")));
            }
            cfg.tau = Some(t);
            cfg.train.tau = t;
            cfg.bench.tau = t;
        }
        Ok(cfg)
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(self.train.tau)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `A:B` into a pair of class names.
pub fn parse_pair(text: &str) -> Result<(String, String)> {
    match text.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(Error::ConfigError(format!("expected `A:B`, got `{text}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub full_manifest: PathBuf,
    pub manifest: PathBuf,
}

/// Writes the synthetic dataset, its fully labeled manifest and the binary
/// manifest derived from it.
pub fn cmd_generate(data: &SynthConfig, mode: SplitMode, out: &Path) -> Result<GenerateOutput> {
    let full = synth_generate(data, out)?;
    let full_manifest = out.join(FULL_MANIFEST);
    full.save(&full_manifest)?;
    let binary = split_full_to_binary(&full, mode)?;
    let manifest = out.join(BINARY_MANIFEST);
    binary.save(&manifest)?;
    Ok(GenerateOutput {
        full_manifest,
        manifest,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub reports: Vec<TrainReport>,
    pub checkpoints: Vec<PathBuf>,
    pub report_path: PathBuf,
}

fn checkpoint_name(trial: Trial, member: Option<&str>) -> String {
    match member {
        Some(class) => format!("{trial}-{class}.ckpt"),
        None => format!("{trial}.ckpt"),
    }
}

/// Trains the configured trial. Ensembles write one checkpoint per class.
/// Reports go to `train_report.json` as a list.
pub fn cmd_train(config: &TrainConfig, manifest: &Path, out: &Path) -> Result<TrainOutput> {
    let manifest = load_manifest(manifest)?;
    let catalog = &manifest.catalog;
    let (mut reports, checkpoints): (Vec<TrainReport>, Vec<Checkpoint>) = match config.trial {
        Trial::En => {
            let trained = train_ensemble(config, &manifest)?;
            (trained.reports, trained.checkpoints)
        }
        _ => {
            let (report, ck) = train(config, &manifest)?;
            (vec![report], vec![ck])
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::with_capacity(checkpoints.len());
    for (report, ck) in reports.iter_mut().zip(&checkpoints) {
        let name = checkpoint_name(config.trial, report.member_class.as_deref());
        let path = out.join(&name);
        fs::write(&path, save_checkpoint(ck, catalog)).map_err(|e| Error::io(&path, e))?;
        report.checkpoint = Some(name);
        paths.push(path);
    }
    let report_path = out.join("train_report.json");
    let mut json = serde_json::to_string_pretty(&reports)?;
    json.push('\n');
    write_text(&report_path, &json)?;
    Ok(TrainOutput {
        reports,
        checkpoints: paths,
        report_path,
    })
}

pub fn read_checkpoint(path: &Path, catalog: &ClassCatalog) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes, catalog)
}

pub fn load_predictor(paths: &[PathBuf], catalog: &ClassCatalog) -> Result<Predictor> {
    let cks = paths
        .iter()
        .map(|p| read_checkpoint(p, catalog))
        .collect::<Result<Vec<_>>>()?;
    Predictor::from_checkpoints(cks, catalog)
}

/// A named model for evaluation: `name=path` or `name=path1,path2,...` for
/// ensemble members.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub checkpoints: Vec<PathBuf>,
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, paths) = s
            .split_once('=')
            .ok_or_else(|| Error::ConfigError(format!("expected `name=path[,path...]`, got `{s}`")))?;
        let checkpoints: Vec<PathBuf> = paths.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect();
        if name.is_empty() || checkpoints.is_empty() {
            return Err(Error::ConfigError(format!("expected `name=path[,path...]`, got `{s}`")));
        }
        Ok(ModelSpec {
            name: name.to_string(),
            checkpoints,
        })
    }
}

/// Scores every model on one split and writes `metrics.json`, `metrics.md`
/// and a confusion image per model.
pub fn cmd_eval(
    models: &[ModelSpec],
    manifest: &Path,
    split: Split,
    tau: f64,
    comparisons: &[(String, String)],
    out: &Path,
) -> Result<MetricsReport> {
    if models.is_empty() {
        return Err(Error::ConfigError("no models to evaluate".into()));
    }
    let manifest = load_manifest(manifest)?;
    let catalog = &manifest.catalog;
    let predictors = models
        .iter()
        .map(|m| load_predictor(&m.checkpoints, catalog))
        .collect::<Result<Vec<_>>>()?;
    let frames = manifest.load_split(split)?;
    if frames.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let images: Vec<Tensor> = frames.iter().map(|f| Tensor::from_image(&f.frame.image)).collect();
    let gts: Vec<GroundTruth> = frames.iter().map(|f| GroundTruth::from_frame(&f.frame)).collect();
    let trials = models
        .iter()
        .zip(&predictors)
        .map(|(m, p)| {
            Ok(TrialPredictions {
                name: m.name.clone(),
                maps: p.predict_all(&images, tau)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = build_report(&trials, &gts, catalog, comparisons)?;
    write_text(&out.join("metrics.json"), &report.to_json()?)?;
    write_text(&out.join("metrics.md"), &report.to_markdown())?;
    for t in &report.trials {
        write_rgb(&out.join(format!("confusion_{}.png", t.name)), &render_confusion(&t.confusion, 16))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutput {
    pub class_map: PathBuf,
    pub overlay: PathBuf,
}

/// Class colours blended over the image; background pixels are left as is.
pub fn overlay(image: &Grid<[u8; 3]>, indices: &Grid<u8>, palette: &[[u8; 3]], alpha: f64) -> Result<Grid<[u8; 3]>> {
    if image.shape() != indices.shape() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} and class map {:?}",
            image.shape(),
            indices.shape()
        )));
    }
    Ok(Grid::from_fn(image.height(), image.width(), |r, c| {
        let px = *image.get(r, c);
        let idx = *indices.get(r, c) as usize;
        if idx == 0 {
            return px;
        }
        let col = palette[idx];
        let mut out = [0u8; 3];
        for k in 0..3 {
            out[k] = (alpha * f64::from(col[k]) + (1.0 - alpha) * f64::from(px[k])).round() as u8;
        }
        out
    }))
}

/// Segments one image, writing `<stem>.classes.png` (palette indexed, 0 is
/// background) and `<stem>.overlay.png` into `out`.
pub fn cmd_infer(
    checkpoints: &[PathBuf],
    manifest: &Path,
    image: &Path,
    tau: f64,
    out: &Path,
) -> Result<InferOutput> {
    let manifest = load_manifest(manifest)?;
    let catalog = &manifest.catalog;
    let predictor = load_predictor(checkpoints, catalog)?;
    if !image.is_file() {
        return Err(Error::MissingFile(image.to_path_buf()));
    }
    let rgb = read_rgb(image)?;
    let map = predictor.predict(&Tensor::from_image(&rgb), tau)?;
    let indices = palette_indices(&map, catalog);
    let colors = palette(catalog);
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let stem = stem.strip_suffix(".img").unwrap_or(&stem).to_string();
    let class_map = out.join(format!("{stem}.classes.png"));
    let overlay_path = out.join(format!("{stem}.overlay.png"));
    write_indexed(&class_map, &indices, &colors)?;
    write_rgb(&overlay_path, &overlay(&rgb, &indices, &colors, 0.5)?)?;
    Ok(InferOutput {
        class_map,
        overlay: overlay_path,
    })
}

/// Models timed by [`cmd_bench`].
#[derive(Debug, Clone)]
pub enum BenchModels {
    /// Freshly initialised models; latency does not depend on the weights.
    Random { model: TinyConfig, classes: usize, seed: u64 },
    /// A trained multi-class model and one trained ensemble member.
    Checkpoints { manifest: PathBuf, single: PathBuf, member: PathBuf },
}

pub fn cmd_bench(config: &BenchConfig, models: &BenchModels, out: Option<&Path>) -> Result<BenchSuite> {
    config.validate()?;
    let (single, member) = match models {
        BenchModels::Random { model, classes, seed } => (
            Predictor::Single {
                model: TinyEncoderDecoder::new(*model, *classes, *seed)?,
                background_channel: false,
            },
            TinyEncoderDecoder::new(*model, 1, seed.wrapping_add(1))?,
        ),
        BenchModels::Checkpoints { manifest, single, member } => {
            let manifest = load_manifest(manifest)?;
            let single = load_predictor(std::slice::from_ref(single), &manifest.catalog)?;
            let member = read_checkpoint(member, &manifest.catalog)?;
            if member.kind.trial != Trial::En {
                return Err(Error::ConfigError("the member checkpoint is not an ensemble member".into()));
            }
            (single, member.model)
        }
    };
    let suite = bench_scaling(&single, &member, config)?;
    if let Some(out) = out {
        write_text(&out.join("bench.json"), &suite.to_json()?)?;
    }
    Ok(suite)
}
