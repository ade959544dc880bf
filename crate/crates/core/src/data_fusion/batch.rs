//! Epoch-wise, seeded batching over prepared training samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_fusion::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::label_algebra::{derive_supervision, SupervisionVolume};
use crate::model::Tensor;

/// One image with the supervision it is trained against.
#[derive(Debug, Clone)]
pub struct Sample {
    pub subset: String,
    pub id: String,
    pub image: Tensor,
    pub supervision: SupervisionVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// Batches may combine frames of different subsets.
    #[default]
    Mixed,
    /// Every batch is drawn from a single subset.
    PerSubset,
}

/// Index batches for one epoch. Each sample index appears exactly once; the
/// order depends only on `(seed, epoch)`.
pub fn epoch_batches(
    subsets: &[&str],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    mode: BatchMode,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::ConfigError("batch size must be at least 1".into()));
    }
    if subsets.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..subsets.len()).collect();
    order.shuffle(&mut rng);
    match mode {
        BatchMode::Mixed => Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect()),
        BatchMode::PerSubset => {
            let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
            for i in order {
                match groups.iter_mut().find(|(name, _)| *name == subsets[i]) {
                    Some((_, g)) => g.push(i),
                    None => groups.push((subsets[i], vec![i])),
                }
            }
            let mut batches: Vec<Vec<usize>> = groups
                .iter()
                .flat_map(|(_, g)| g.chunks(batch_size).map(<[usize]>::to_vec))
                .collect();
            batches.shuffle(&mut rng);
            Ok(batches)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub supervision: Vec<SupervisionVolume>,
    pub subsets: Vec<String>,
    pub ids: Vec<String>,
}

/// Streams the batches of one epoch.
pub struct BatchIter<'a> {
    samples: &'a [Sample],
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    pub fn new(
        samples: &'a [Sample],
        batch_size: usize,
        seed: u64,
        epoch: u64,
        mode: BatchMode,
    ) -> Result<Self> {
        let subsets: Vec<&str> = samples.iter().map(|s| s.subset.as_str()).collect();
        let batches = epoch_batches(&subsets, batch_size, seed, epoch, mode)?;
        Ok(BatchIter {
            samples,
            batches: batches.into_iter(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let idx = self.batches.next()?;
        let picked: Vec<&Sample> = idx.iter().map(|&i| &self.samples[i]).collect();
        let images: Vec<Tensor> = picked.iter().map(|s| s.image.clone()).collect();
        Some(Batch {
            images: Tensor::stack(&images).expect("samples share one image size"),
            supervision: picked.iter().map(|s| s.supervision.clone()).collect(),
            subsets: picked.iter().map(|s| s.subset.clone()).collect(),
            ids: picked.iter().map(|s| s.id.clone()).collect(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.batches.size_hint()
    }
}

/// Loads a split and applies the implication rules to every frame.
pub fn load_samples(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    let frames = manifest.load_split(split)?;
    if frames.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    frames
        .into_iter()
        .map(|f| {
            Ok(Sample {
                supervision: derive_supervision(&f.frame, &manifest.catalog)?,
                image: Tensor::from_image(&f.frame.image),
                subset: f.subset,
                id: f.id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes_cover_every_index_once() {
        let subsets = vec!["a"; 10];
        let batches = epoch_batches(&subsets, 3, 1, 0, BatchMode::Mixed).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn order_depends_on_seed_and_epoch() {
        let subsets = vec!["a"; 20];
        let a = epoch_batches(&subsets, 4, 5, 0, BatchMode::Mixed).unwrap();
        assert_eq!(a, epoch_batches(&subsets, 4, 5, 0, BatchMode::Mixed).unwrap());
        assert_ne!(a, epoch_batches(&subsets, 4, 5, 1, BatchMode::Mixed).unwrap());
        assert_ne!(a, epoch_batches(&subsets, 4, 6, 0, BatchMode::Mixed).unwrap());
    }

    #[test]
    fn per_subset_batches_do_not_mix() {
        let subsets = ["a", "b", "a", "c", "b", "a", "c", "c", "a"];
        let batches = epoch_batches(&subsets, 2, 3, 0, BatchMode::PerSubset).unwrap();
        let mut all: Vec<usize> = Vec::new();
        for b in &batches {
            assert!(b.iter().all(|&i| subsets[i] == subsets[b[0]]));
            all.extend(b);
        }
        all.sort();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            epoch_batches(&["a"], 0, 0, 0, BatchMode::Mixed),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            epoch_batches(&[], 2, 0, 0, BatchMode::Mixed),
            Err(Error::EmptySplit(_))
        ));
    }
}
