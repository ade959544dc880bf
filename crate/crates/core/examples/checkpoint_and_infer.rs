//! Saves a trained model, reloads it and segments an unseen frame.

use complseg::data_fusion::raster::write_indexed;
use complseg::data_fusion::{synth_frames, LoadedFrame, Split, SynthConfig};
use complseg::evaluation::{dice_image, palette, palette_indices, Predictor};
use complseg::label_algebra::ClassCatalog;
use complseg::model::{load_checkpoint, save_checkpoint, SegmentationModel, Tensor};
use complseg::trainer::{train_frames, TrainConfig, Trial};

fn main() -> complseg::Result<()> {
    let data = SynthConfig {
        n_train: 48,
        n_val: 12,
        n_test: 1,
        height: 32,
        width: 32,
        ..SynthConfig::default()
    };
    let catalog = ClassCatalog::new(data.classes.clone())?;
    let frames: Vec<LoadedFrame> = synth_frames(&data)?
        .into_iter()
        .map(|f| LoadedFrame { subset: "full".into(), id: f.id, split: f.split, frame: f.frame })
        .collect();
    let pick = |s: Split| frames.iter().filter(|f| f.split == s).cloned().collect::<Vec<_>>();

    let config = TrainConfig {
        trial: Trial::Fs,
        epochs: 15,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let (_, checkpoint) = train_frames(&config, &catalog, &pick(Split::Train), &pick(Split::Val))?;

    let bytes = save_checkpoint(&checkpoint, &catalog);
    let restored = load_checkpoint(&bytes, &catalog)?;
    assert_eq!(restored.model.params(), checkpoint.model.params());
    println!("checkpoint: {} bytes", bytes.len());

    let predictor = Predictor::from_checkpoints(vec![restored], &catalog)?;
    let test = &pick(Split::Test)[0];
    let map = predictor.predict(&Tensor::from_image(&test.frame.image), config.tau)?;
    for (&c, mask) in &test.frame.masks {
        println!("{:<3} dice {:.3}", catalog.name(c), dice_image(&map, mask, c)?);
    }

    let out = std::env::temp_dir().join("complseg-infer").join("classes.png");
    write_indexed(&out, &palette_indices(&map, &catalog), &palette(&catalog))?;
    println!("class map written to {}", out.display());
    Ok(())
}
