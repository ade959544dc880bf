//! Derives per-class supervision for a frame that carries masks for only
//! some classes, then the mask-only variant that drops implied negatives.

use std::collections::BTreeMap;

use complseg::grid::Grid;
use complseg::label_algebra::{derive_supervision, AnnotationFrame, ClassCatalog, Supervision, SupervisionVolume};

fn show(volume: &SupervisionVolume, catalog: &ClassCatalog) {
    for (c, name) in catalog.names().iter().enumerate() {
        println!("  {name}:");
        for r in 0..volume.height() {
            let row: String = (0..volume.width())
                .map(|col| match volume.state(c, r, col) {
                    Supervision::Pos => '+',
                    Supervision::Neg => '-',
                    Supervision::Ignore => '.',
                })
                .collect();
            println!("    {row}");
        }
    }
}

fn main() -> complseg::Result<()> {
    let catalog = ClassCatalog::new(["liver", "kidney", "spleen"])?;
    // this frame only comes with liver and kidney masks
    let liver = Grid::from_fn(4, 6, |r, c| r < 2 && c < 3);
    let kidney = Grid::from_fn(4, 6, |r, c| r >= 2 && c >= 4);
    let frame = AnnotationFrame::new(
        Grid::filled(4, 6, [0, 0, 0]),
        BTreeMap::from([(0, liver), (1, kidney)]),
    );

    let volume = derive_supervision(&frame, &catalog)?;
    println!("implicit labels (+ pos, - neg, . ignore):");
    show(&volume, &catalog);

    println!("\nmask only:");
    show(&volume.without_implied_negatives(), &catalog);
    Ok(())
}
