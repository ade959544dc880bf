//! Trains a multi-class model on the union of binary subsets with implicit
//! labels, on a dataset small enough to finish in seconds.

use complseg::data_fusion::{split_full_to_binary, SplitMode, SynthConfig};
use complseg::model::SegmentationModel;
use complseg::trainer::{train, TrainConfig, Trial};

fn main() -> complseg::Result<()> {
    let dir = std::env::temp_dir().join("complseg-train-implicit");
    let data = SynthConfig {
        n_train: 48,
        n_val: 12,
        n_test: 1,
        height: 32,
        width: 32,
        ..SynthConfig::default()
    };
    let full = complseg::data_fusion::synth_generate(&data, &dir)?;
    let binary = split_full_to_binary(&full, SplitMode::Partition)?;

    let config = TrainConfig {
        trial: Trial::Il,
        epochs: 15,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let (report, checkpoint) = train(&config, &binary)?;
    println!("positive weights {:?}", report.positive_weights.weights);
    for e in &report.epochs {
        println!(
            "epoch {:>2}  lr {:.2e}  loss {:.4}  val dice {:.4}",
            e.epoch, e.learning_rate, e.train_loss, e.val_mean_dice
        );
    }
    println!(
        "kept epoch {} ({} output channels)",
        report.selected_epoch,
        checkpoint.model.out_channels()
    );
    Ok(())
}
