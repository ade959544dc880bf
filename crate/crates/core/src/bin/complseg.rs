use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use complseg::cli::{self, BenchModels, ModelSpec, RootConfig};
use complseg::data_fusion::{Split, SplitMode};
use complseg::data_fusion::synth::default_class_names;
use complseg::trainer::Trial;

#[derive(Parser)]
#[command(name = "complseg", version, about = "Segmentation from complementary partially labeled datasets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Root TOML config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Decode threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with full and binary manifests.
    Generate {
        /// Number of classes, named A, B, ...
        #[arg(long)]
        classes: Option<usize>,
        /// Confusable class pair `A:B`; repeatable.
        #[arg(long)]
        confusable: Vec<String>,
        #[arg(long, value_enum)]
        split_mode: Option<SplitModeArg>,
    },
    /// Train one trial.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trial: Option<Trial>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score models on a split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// `name=ckpt` or `name=ckpt1,ckpt2,...`; repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<ModelSpec>,
        /// Pair of model names `a:b` to test; repeatable.
        #[arg(long)]
        compare: Vec<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Segment one image.
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        image: PathBuf,
    },
    /// Time a single model against ensembles.
    Bench {
        /// Catalog source when timing trained checkpoints.
        #[arg(long, requires_all = ["single", "member"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        single: Option<PathBuf>,
        #[arg(long)]
        member: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitModeArg {
    Replicate,
    Partition,
}

fn run(cli: Cli) -> complseg::Result<()> {
    let Common { config, seed, tau, out } = cli.common;
    let mut cfg = RootConfig::resolve(config.as_deref(), seed, tau)?;
    match cli.command {
        Command::Generate { classes, confusable, split_mode } => {
            if let Some(n) = classes {
                cfg.data.classes = default_class_names(n);
                if confusable.is_empty() {
                    cfg.data.confusable_pairs.retain(|(a, b)| {
                        cfg.data.classes.contains(a) && cfg.data.classes.contains(b)
                    });
                }
            }
            if !confusable.is_empty() {
                cfg.data.confusable_pairs =
                    confusable.iter().map(|p| cli::parse_pair(p)).collect::<Result<_, _>>()?;
            }
            if let Some(m) = split_mode {
                cfg.split.mode = match m {
                    SplitModeArg::Replicate => SplitMode::Replicate,
                    SplitModeArg::Partition => SplitMode::Partition,
                };
            }
            let o = cli::cmd_generate(&cfg.data, cfg.split.mode, &out)?;
            println!("{}\n{}", o.full_manifest.display(), o.manifest.display());
        }
        Command::Train { manifest, trial, epochs } => {
            if let Some(t) = trial {
                cfg.train.trial = t;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let o = cli::cmd_train(&cfg.train, &manifest, &out)?;
            for (r, p) in o.reports.iter().zip(&o.checkpoints) {
                println!(
                    "{} epoch {} val dice {:.4}",
                    p.display(),
                    r.selected_epoch,
                    r.best_val_mean_dice
                );
            }
        }
        Command::Eval { manifest, models, compare, split } => {
            let comparisons = compare.iter().map(|p| cli::parse_pair(p)).collect::<Result<Vec<_>, _>>()?;
            let report = cli::cmd_eval(&models, &manifest, split, cfg.tau(), &comparisons, &out)?;
            print!("{}", report.to_markdown());
        }
        Command::Infer { manifest, checkpoints, image } => {
            let o = cli::cmd_infer(&checkpoints, &manifest, &image, cfg.tau(), &out)?;
            println!("{}\n{}", o.class_map.display(), o.overlay.display());
        }
        Command::Bench { manifest, single, member, classes, size, iterations } => {
            if let Some(s) = size {
                cfg.bench.height = s;
                cfg.bench.width = s;
            }
            if let Some(i) = iterations {
                cfg.bench.iterations = i;
            }
            let models = match (manifest, single, member) {
                (Some(manifest), Some(single), Some(member)) => BenchModels::Checkpoints { manifest, single, member },
                _ => BenchModels::Random { model: cfg.train.model, classes, seed: cfg.bench.seed },
            };
            let suite = cli::cmd_bench(&cfg.bench, &models, Some(&out))?;
            print!("{}", suite.to_json()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
