use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::data_fusion::manifest::{DatasetManifest, LoadedFrame, Split};
use crate::error::{Error, Result};
use crate::label_algebra::{derive_supervision, ClassCatalog, Supervision, SupervisionVolume};

/// Pixel counts of one channel. `negative` counts NEG states on frames
/// annotated for the class; `implied_negative` counts NEG states that only
/// exist because another class is positive there.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: u64,
    pub negative: u64,
    pub implied_negative: u64,
    pub ignore: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.positive + self.negative + self.implied_negative + self.ignore
    }
}

impl AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.positive += o.positive;
        self.negative += o.negative;
        self.implied_negative += o.implied_negative;
        self.ignore += o.ignore;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelStats {
    pub classes: Vec<ClassCounts>,
    /// Pixels per channel summed over all frames.
    pub pixels: u64,
    pub frames: u64,
    pub subsets: BTreeMap<String, Vec<ClassCounts>>,
}

impl PixelStats {
    pub fn empty(channels: usize) -> Self {
        PixelStats {
            classes: vec![ClassCounts::default(); channels],
            ..Default::default()
        }
    }

    pub fn add_volume(&mut self, subset: &str, volume: &SupervisionVolume) {
        let channels = volume.channels();
        if self.classes.len() < channels {
            self.classes.resize(channels, ClassCounts::default());
        }
        let per_subset = self
            .subsets
            .entry(subset.to_string())
            .or_insert_with(|| vec![ClassCounts::default(); channels]);
        if per_subset.len() < channels {
            per_subset.resize(channels, ClassCounts::default());
        }
        for c in 0..channels {
            let annotated = volume.is_annotated(c);
            let mut counts = ClassCounts::default();
            for s in volume.channel(c) {
                match (s, annotated) {
                    (Supervision::Pos, _) => counts.positive += 1,
                    (Supervision::Neg, true) => counts.negative += 1,
                    (Supervision::Neg, false) => counts.implied_negative += 1,
                    (Supervision::Ignore, _) => counts.ignore += 1,
                }
            }
            self.classes[c] += counts;
            per_subset[c] += counts;
        }
        self.pixels += volume.pixels() as u64;
        self.frames += 1;
    }

    pub fn from_volumes<'a>(
        channels: usize,
        volumes: impl IntoIterator<Item = (&'a str, &'a SupervisionVolume)>,
    ) -> Self {
        let mut stats = PixelStats::empty(channels);
        for (subset, v) in volumes {
            stats.add_volume(subset, v);
        }
        stats
    }

    pub fn from_frames(frames: &[LoadedFrame], catalog: &ClassCatalog) -> Result<Self> {
        let mut stats = PixelStats::empty(catalog.len());
        for f in frames {
            stats.add_volume(&f.subset, &derive_supervision(&f.frame, catalog)?);
        }
        Ok(stats)
    }
}

impl AddAssign<&PixelStats> for PixelStats {
    fn add_assign(&mut self, o: &PixelStats) {
        if self.classes.len() < o.classes.len() {
            self.classes.resize(o.classes.len(), ClassCounts::default());
        }
        for (a, b) in self.classes.iter_mut().zip(&o.classes) {
            *a += *b;
        }
        for (name, counts) in &o.subsets {
            let mine = self
                .subsets
                .entry(name.clone())
                .or_insert_with(|| vec![ClassCounts::default(); counts.len()]);
            for (a, b) in mine.iter_mut().zip(counts) {
                *a += *b;
            }
        }
        self.pixels += o.pixels;
        self.frames += o.frames;
    }
}

impl Add<&PixelStats> for PixelStats {
    type Output = PixelStats;

    fn add(mut self, o: &PixelStats) -> PixelStats {
        self += o;
        self
    }
}

/// Exact counts over every frame of `split`, after applying the implication
/// rules.
pub fn compute_pixel_stats(manifest: &DatasetManifest, split: Split) -> Result<PixelStats> {
    let frames = manifest.load_split(split)?;
    if frames.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    PixelStats::from_frames(&frames, &manifest.catalog)
}
