//! Implicit labels against an ensemble of per-class models and against the
//! mask-only ablation, evaluated on a fully labeled test split.
//!
//! A reduced run by default; `--full` runs the complete three-seed setup
//! (several minutes).

use complseg::data_fusion::SynthConfig;
use complseg::experiment::{run_experiment, ExperimentConfig};

fn main() -> complseg::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let mut config = ExperimentConfig::default();
    if !full {
        config.data = SynthConfig {
            n_train: 48,
            n_val: 12,
            n_test: 12,
            height: 32,
            width: 32,
            ..SynthConfig::default()
        };
        config.train.epochs = 15;
        config.seeds = vec![0];
    }
    let dir = std::env::temp_dir().join("complseg-compare");
    let outcome = run_experiment(&config, &dir)?;
    print!("{}", outcome.summary());
    for s in &outcome.seeds {
        println!("\nseed {}", s.seed);
        print!("{}", s.report.to_markdown());
    }
    Ok(())
}
