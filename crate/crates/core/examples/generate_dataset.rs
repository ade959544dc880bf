//! Writes a small synthetic dataset, splits it into one binary subset per
//! class and prints the per-class pixel counts the loss weights come from.
//!
//! ```text
//! cargo run --example generate_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use complseg::data_fusion::{compute_pixel_stats, split_full_to_binary, Split, SplitMode, SynthConfig};

fn main() -> complseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("complseg-generate"));
    let config = SynthConfig {
        n_train: 24,
        n_val: 6,
        n_test: 6,
        ..SynthConfig::default()
    };
    let full = complseg::data_fusion::synth_generate(&config, &out)?;
    full.save(&out.join("manifest_full.json"))?;
    let binary = split_full_to_binary(&full, SplitMode::Partition)?;
    binary.save(&out.join("manifest.json"))?;

    println!("wrote {} frames to {}", full.subsets[0].frames.len(), out.display());
    for s in &binary.subsets {
        println!("subset {:<2} {} frames, annotates {:?}", s.name, s.frames.len(), s.annotated_classes);
    }

    let stats = compute_pixel_stats(&binary, Split::Train)?;
    println!("\nclass   pos     neg     implied  ignore");
    for (name, c) in binary.catalog.names().iter().zip(&stats.classes) {
        println!(
            "{name:<7} {:<7} {:<7} {:<8} {}",
            c.positive, c.negative, c.implied_negative, c.ignore
        );
    }
    Ok(())
}
