//! Dataset manifests, raster IO, pixel statistics, the synthetic generator
//! and batching.

pub mod batch;
pub mod manifest;
pub mod raster;
pub mod stats;
pub mod synth;

pub use batch::{load_samples, Batch, BatchIter, BatchMode, Sample};
pub use manifest::{
    load_manifest, split_full_to_binary, DatasetManifest, FrameEntry, LoadedFrame, Split,
    SplitMode, SubsetEntry,
};
pub use stats::{compute_pixel_stats, ClassCounts, PixelStats};
pub use synth::{synth_frames, synth_generate, SynthConfig, SynthFrame};
