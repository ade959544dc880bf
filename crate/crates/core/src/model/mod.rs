//! Segmentation models with independent per-channel sigmoid outputs.

pub mod checkpoint;
pub mod ensemble;
pub mod layers;
pub mod tensor;
pub mod tiny;

use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
pub use ensemble::{ensemble_forward, EnsembleBundle};
pub use tensor::Tensor;
pub use tiny::{TinyConfig, TinyEncoderDecoder};

use crate::error::Result;

/// A model maps a `[0, 1]`-normalised RGB batch to raw logits of the same
/// spatial size, one channel per output. Probabilities are the per-channel
/// sigmoid; channels do not interact.
///
/// Parameters are exposed as one flat vector so optimisers and checkpoints
/// do not need to know the architecture.
pub trait SegmentationModel: Send + Sync {
    type Cache: Send + Sync;

    fn out_channels(&self) -> usize;

    fn params(&self) -> &[f32];

    fn params_mut(&mut self) -> &mut [f32];

    /// Logits for a single image (`batch == 1`).
    fn forward_one(&self, image: &Tensor) -> Result<Tensor>;

    /// Like [`forward_one`](Self::forward_one), keeping what the backward
    /// pass needs.
    fn forward_train(&self, image: &Tensor) -> Result<(Tensor, Self::Cache)>;

    /// Parameter gradient given the gradient of the objective with respect
    /// to this image's logits.
    fn backward(&self, cache: &Self::Cache, grad_logits: &[f32]) -> Vec<f32>;

    fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let outs = (0..images.batch)
            .into_par_iter()
            .map(|b| self.forward_one(&images.item_tensor(b)))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&outs)
    }
}
