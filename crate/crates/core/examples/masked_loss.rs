//! Positive weights from pixel counts and the masked, weighted BCE with its
//! gradient. Ignored entries contribute nothing and get zero gradient.

use std::collections::BTreeMap;

use complseg::data_fusion::PixelStats;
use complseg::grid::Grid;
use complseg::label_algebra::{derive_supervision, AnnotationFrame, ClassCatalog, Supervision};
use complseg::loss::{masked_weighted_bce_with_grad, pos_weight_en, pos_weight_fs, pos_weight_il};

fn main() -> complseg::Result<()> {
    let catalog = ClassCatalog::new(["A", "B"])?;
    let (h, w) = (4, 4);
    let a = Grid::from_fn(h, w, |r, c| r < 2 && c < 2);
    let b = Grid::from_fn(h, w, |r, _| r == 3);
    let image = Grid::filled(h, w, [0, 0, 0]);
    // one frame annotated for A only, one for B only
    let frames = [
        AnnotationFrame::new(image.clone(), BTreeMap::from([(0, a.clone())])),
        AnnotationFrame::new(image.clone(), BTreeMap::from([(1, b.clone())])),
    ];
    let volumes = frames
        .iter()
        .map(|f| derive_supervision(f, &catalog))
        .collect::<complseg::Result<Vec<_>>>()?;

    let stats = PixelStats::from_volumes(2, volumes.iter().enumerate().map(|(i, v)| (["a", "b"][i], v)));
    let il = pos_weight_il(&stats, catalog.names())?;
    println!("IL weights        {:?}", il.weights);
    println!("EN weight for A   {:?}", pos_weight_en(&stats, 0, "A")?.weights);
    // the fully supervised scheme needs every class annotated everywhere
    let both = derive_supervision(&AnnotationFrame::new(image, BTreeMap::from([(0, a), (1, b)])), &catalog)?;
    let fs = pos_weight_fs(&PixelStats::from_volumes(2, [("full", &both)]), true)?;
    println!("FS softmax        {:?} (last entry is background)", fs.weights);

    let logits: Vec<f64> = (0..2 * 2 * h * w).map(|i| ((i * 7 % 11) as f64 - 5.0) / 2.0).collect();
    let (loss, grad) = masked_weighted_bce_with_grad(&logits, &volumes, &il)?;
    println!("\nloss {:.6}", loss.total);
    for (c, cl) in loss.classes.iter().enumerate() {
        println!("  class {c}: {:?} over {} valid pixels", cl.loss, cl.valid_pixels);
    }

    let mut ignored = 0;
    for (b, v) in volumes.iter().enumerate() {
        for (i, s) in v.states().iter().enumerate() {
            if *s == Supervision::Ignore {
                assert_eq!(grad[b * 2 * h * w + i], 0.0);
                ignored += 1;
            }
        }
    }
    println!("{ignored} ignored entries, all with zero gradient");
    Ok(())
}
