use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{argmax_decode, ensemble_merge, SegmentationMap};
use crate::label_algebra::ClassCatalog;
use crate::model::{ensemble_forward, Checkpoint, EnsembleBundle, SegmentationModel, Tensor, TinyEncoderDecoder};
use crate::trainer::Trial;

/// Something that turns an image into a class map: one multi-class model
/// or a bundle of one-class members.
#[derive(Debug, Clone)]
pub enum Predictor {
    Single {
        model: TinyEncoderDecoder,
        background_channel: bool,
    },
    Ensemble(EnsembleBundle<TinyEncoderDecoder>),
}

impl Predictor {
    /// One non-ensemble checkpoint, or one ensemble checkpoint per class in
    /// any order.
    pub fn from_checkpoints(checkpoints: Vec<Checkpoint>, catalog: &ClassCatalog) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::EmptyInput("no checkpoints given".into()));
        }
        if checkpoints.iter().all(|c| c.kind.trial != Trial::En) {
            if checkpoints.len() != 1 {
                return Err(Error::ConfigError(format!(
                    "{} non-ensemble checkpoints given for one model",
                    checkpoints.len()
                )));
            }
            let ck = checkpoints.into_iter().next().unwrap();
            let expected = catalog.len() + usize::from(ck.kind.background_channel);
            if ck.model.out_channels() != expected {
                return Err(Error::CatalogMismatch);
            }
            return Ok(Predictor::Single {
                model: ck.model,
                background_channel: ck.kind.background_channel,
            });
        }
        let mut members = checkpoints
            .into_iter()
            .map(|c| match (c.kind.trial, c.kind.member_class) {
                (Trial::En, Some(class)) => Ok((class, c.model)),
                _ => Err(Error::IncompleteBundle(
                    "ensemble and non-ensemble checkpoints mixed".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        members.sort_by_key(|(class, _)| *class);
        Ok(Predictor::Ensemble(EnsembleBundle::new(catalog, members)?))
    }

    /// Models evaluated per frame.
    pub fn model_count(&self) -> usize {
        match self {
            Predictor::Single { .. } => 1,
            Predictor::Ensemble(b) => b.len(),
        }
    }

    /// Per-class probabilities of a single image, background channel last
    /// if the model has one.
    pub fn probabilities(&self, image: &Tensor) -> Result<Tensor> {
        match self {
            Predictor::Single { model, .. } => Ok(model.forward_one(image)?.sigmoid()),
            Predictor::Ensemble(bundle) => ensemble_forward(bundle, image),
        }
    }

    pub fn predict(&self, image: &Tensor, tau: f64) -> Result<SegmentationMap> {
        let probs = self.probabilities(image)?;
        match self {
            Predictor::Single { background_channel, .. } => argmax_decode(&probs, tau, *background_channel),
            Predictor::Ensemble(_) => ensemble_merge(&probs, tau),
        }
    }

    /// Class maps of many single images, in input order.
    pub fn predict_all(&self, images: &[Tensor], tau: f64) -> Result<Vec<SegmentationMap>> {
        images.par_iter().map(|im| self.predict(im, tau)).collect()
    }
}
