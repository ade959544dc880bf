use crate::error::{Error, Result};
use crate::label_algebra::ClassCatalog;
use crate::model::{SegmentationModel, Tensor};

/// One single-output model per catalog class, in catalog order.
#[derive(Debug, Clone)]
pub struct EnsembleBundle<M> {
    members: Vec<M>,
}

impl<M: SegmentationModel> EnsembleBundle<M> {
    /// `members` pairs each model with the catalog index it was trained for.
    pub fn new(catalog: &ClassCatalog, members: Vec<(usize, M)>) -> Result<Self> {
        if members.len() != catalog.len() {
            return Err(Error::IncompleteBundle(format!(
                "{} members for {} classes",
                members.len(),
                catalog.len()
            )));
        }
        let mut models = Vec::with_capacity(members.len());
        for (position, (class, model)) in members.into_iter().enumerate() {
            if class != position {
                return Err(Error::IncompleteBundle(format!(
                    "member {position} was trained for `{}` but the catalog expects `{}`",
                    catalog.name(class.min(catalog.len())),
                    catalog.name(position)
                )));
            }
            if model.out_channels() != 1 {
                return Err(Error::IncompleteBundle(format!(
                    "member for `{}` has {} outputs, expected 1",
                    catalog.name(position),
                    model.out_channels()
                )));
            }
            models.push(model);
        }
        Ok(EnsembleBundle { members: models })
    }

    /// Builds a bundle of the first `k` models without catalog checks; used
    /// where only the cost of `k` members matters.
    pub fn unchecked(members: Vec<M>) -> Self {
        EnsembleBundle { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[M] {
        &self.members
    }
}

/// Stacks the sigmoid output of every member: channel `c` of the result is
/// member `c`'s probability.
pub fn ensemble_forward<M: SegmentationModel>(
    bundle: &EnsembleBundle<M>,
    images: &Tensor,
) -> Result<Tensor> {
    if bundle.is_empty() {
        return Err(Error::IncompleteBundle("bundle has no members".into()));
    }
    let k = bundle.len();
    let hw = images.pixels();
    let mut out = Tensor::zeros(images.batch, k, images.height, images.width);
    for (c, member) in bundle.members().iter().enumerate() {
        let probs = member.forward(images)?.sigmoid();
        for b in 0..images.batch {
            out.data[(b * k + c) * hw..(b * k + c + 1) * hw].copy_from_slice(probs.item(b));
        }
    }
    Ok(out)
}
