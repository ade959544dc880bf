//! Turns partial binary annotations into three-state per-class supervision.
//!
//! Every pixel is assumed to belong to exactly one class. Two implications
//! follow from that:
//!
//! 1. a positive pixel of one class is a negative pixel of every other class;
//! 2. a negative pixel of an annotated class says nothing about the classes the
//!    frame is not annotated for, so those stay unknown.
//!
//! [`derive_supervision`] applies both rules and yields a [`SupervisionVolume`]
//! whose [`Supervision::Ignore`] entries are masked out of the loss.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Mask, RgbImage};

/// Ordered set of foreground classes. Channel `i` of every model output and
/// supervision volume corresponds to `classes[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct ClassCatalog {
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRepr {
    classes: Vec<String>,
}

impl TryFrom<CatalogRepr> for ClassCatalog {
    type Error = Error;

    fn try_from(repr: CatalogRepr) -> Result<Self> {
        ClassCatalog::new(repr.classes)
    }
}

impl From<ClassCatalog> for CatalogRepr {
    fn from(catalog: ClassCatalog) -> Self {
        CatalogRepr {
            classes: catalog.classes,
        }
    }
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.is_empty() {
            return Err(Error::InvalidCatalog("at least one class is required".into()));
        }
        let mut seen = HashSet::new();
        for name in &classes {
            if name.trim().is_empty() {
                return Err(Error::InvalidCatalog("class names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidCatalog(format!("duplicate class `{name}`")));
            }
        }
        Ok(ClassCatalog { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, id: usize) -> &str {
        if id == self.background_id() {
            "background"
        } else {
            &self.classes[id]
        }
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Id used for background in decoded maps. It is one past the last class
    /// index, so it never collides with a trainable channel.
    pub fn background_id(&self) -> usize {
        self.classes.len()
    }

    /// Stable digest of the ordered class names, stored in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for name in &self.classes {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
        }
        hasher.finalize().into()
    }
}

/// One image with binary masks for the subset of classes it is annotated for.
/// Masks are keyed by catalog index.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFrame {
    pub image: RgbImage,
    pub masks: BTreeMap<usize, Mask>,
}

impl AnnotationFrame {
    pub fn new(image: RgbImage, masks: BTreeMap<usize, Mask>) -> Self {
        AnnotationFrame { image, masks }
    }

    pub fn annotated_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.masks.keys().copied()
    }

    pub fn is_annotated(&self, class: usize) -> bool {
        self.masks.contains_key(&class)
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    /// Keeps only the masks of `classes`.
    pub fn restricted_to(&self, classes: &[usize]) -> AnnotationFrame {
        AnnotationFrame {
            image: self.image.clone(),
            masks: self
                .masks
                .iter()
                .filter(|(c, _)| classes.contains(c))
                .map(|(&c, m)| (c, m.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Supervision {
    Pos,
    Neg,
    Ignore,
}

/// Per-pixel, per-class supervision. States are stored channel-planar:
/// index `class * height * width + row * width + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionVolume {
    height: usize,
    width: usize,
    channels: usize,
    states: Vec<Supervision>,
    annotated: Vec<bool>,
}

impl SupervisionVolume {
    pub fn from_parts(
        height: usize,
        width: usize,
        states: Vec<Supervision>,
        annotated: Vec<bool>,
    ) -> Result<Self> {
        let channels = annotated.len();
        if states.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} states for {channels} channels of {height}x{width}",
                states.len()
            )));
        }
        Ok(SupervisionVolume {
            height,
            width,
            channels,
            states,
            annotated,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn is_annotated(&self, class: usize) -> bool {
        self.annotated[class]
    }

    pub fn annotated_flags(&self) -> &[bool] {
        &self.annotated
    }

    pub fn states(&self) -> &[Supervision] {
        &self.states
    }

    pub fn channel(&self, class: usize) -> &[Supervision] {
        let n = self.pixels();
        &self.states[class * n..(class + 1) * n]
    }

    pub fn state(&self, class: usize, row: usize, col: usize) -> Supervision {
        self.states[class * self.pixels() + row * self.width + col]
    }

    pub fn count(&self, state: Supervision) -> usize {
        self.states.iter().filter(|&&s| s == state).count()
    }

    /// Drops the negatives implied by other classes' positives: every NEG on a
    /// channel the frame is not annotated for becomes IGNORE. This is the
    /// masking-only ablation.
    pub fn without_implied_negatives(&self) -> SupervisionVolume {
        let mut out = self.clone();
        let n = self.pixels();
        for (class, &annotated) in self.annotated.iter().enumerate() {
            if annotated {
                continue;
            }
            for s in &mut out.states[class * n..(class + 1) * n] {
                if *s == Supervision::Neg {
                    *s = Supervision::Ignore;
                }
            }
        }
        out
    }

    /// Appends an explicit background channel, positive where no class is
    /// positive. Only defined for fully annotated volumes.
    pub fn with_background_channel(&self) -> Result<SupervisionVolume> {
        if let Some(class) = self.annotated.iter().position(|a| !a) {
            return Err(Error::NotFullyLabeled(format!(
                "channel {class} is not annotated; a background channel needs every class"
            )));
        }
        let n = self.pixels();
        let mut states = self.states.clone();
        states.extend((0..n).map(|p| {
            let any_pos = (0..self.channels).any(|c| self.states[c * n + p] == Supervision::Pos);
            if any_pos {
                Supervision::Neg
            } else {
                Supervision::Pos
            }
        }));
        let mut annotated = self.annotated.clone();
        annotated.push(true);
        SupervisionVolume::from_parts(self.height, self.width, states, annotated)
    }

    /// Keeps a single channel, as seen by a one-class ensemble member.
    pub fn select_channel(&self, class: usize) -> SupervisionVolume {
        SupervisionVolume {
            height: self.height,
            width: self.width,
            channels: 1,
            states: self.channel(class).to_vec(),
            annotated: vec![self.annotated[class]],
        }
    }
}

/// Checks that masks match the image size, reference catalog classes and do
/// not overlap.
pub fn validate_frame(frame: &AnnotationFrame, catalog: &ClassCatalog) -> Result<()> {
    let (h, w) = frame.image.shape();
    for (&class, mask) in &frame.masks {
        if class >= catalog.len() {
            return Err(Error::UnknownClass(format!("#{class}")));
        }
        if mask.shape() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "mask of `{}` is {}x{}, image is {h}x{w}",
                catalog.name(class),
                mask.height(),
                mask.width()
            )));
        }
    }

    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (&class, mask) in &frame.masks {
        for (p, &positive) in mask.as_slice().iter().enumerate() {
            if !positive {
                continue;
            }
            if let Some(other) = owner[p] {
                return Err(Error::OverlappingPositives {
                    class_a: catalog.name(other).to_string(),
                    class_b: catalog.name(class).to_string(),
                    row: p / w,
                    col: p % w,
                });
            }
            owner[p] = Some(class);
        }
    }
    Ok(())
}

pub fn derive_supervision(
    frame: &AnnotationFrame,
    catalog: &ClassCatalog,
) -> Result<SupervisionVolume> {
    validate_frame(frame, catalog)?;
    let (h, w) = frame.image.shape();
    let n = h * w;
    let channels = catalog.len();

    // Which annotated class, if any, claims each pixel.
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (&class, mask) in &frame.masks {
        for (p, &positive) in mask.as_slice().iter().enumerate() {
            if positive {
                owner[p] = Some(class);
            }
        }
    }

    let mut states = Vec::with_capacity(n * channels);
    let mut annotated = Vec::with_capacity(channels);
    for class in 0..channels {
        let is_annotated = frame.is_annotated(class);
        annotated.push(is_annotated);
        states.extend(owner.iter().map(|&o| match o {
            Some(c) if c == class => Supervision::Pos,
            Some(_) => Supervision::Neg,
            None if is_annotated => Supervision::Neg,
            None => Supervision::Ignore,
        }));
    }
    SupervisionVolume::from_parts(h, w, states, annotated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn catalog(names: &[&str]) -> ClassCatalog {
        ClassCatalog::new(names.iter().copied()).unwrap()
    }

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut m = Grid::filled(h, w, false);
        for &(r, c) in on {
            m.set(r, c, true);
        }
        m
    }

    fn frame(h: usize, w: usize, masks: Vec<(usize, Mask)>) -> AnnotationFrame {
        AnnotationFrame::new(Grid::filled(h, w, [0, 0, 0]), masks.into_iter().collect())
    }

    #[test]
    fn catalog_rejects_bad_names() {
        assert!(ClassCatalog::new(Vec::<String>::new()).is_err());
        assert!(ClassCatalog::new(["a", "a"]).is_err());
        assert!(ClassCatalog::new(["a", " "]).is_err());
        let cat = catalog(&["a", "b"]);
        assert_eq!(cat.background_id(), 2);
        assert_eq!(cat.name(2), "background");
    }

    #[test]
    fn catalog_serde_validates() {
        let bad: std::result::Result<ClassCatalog, _> =
            serde_json::from_str(r#"{"classes": ["x", "x"]}"#);
        assert!(bad.is_err());
        let good: ClassCatalog = serde_json::from_str(r#"{"classes": ["x", "y"]}"#).unwrap();
        assert_eq!(good.len(), 2);
    }

    #[test]
    fn disjoint_masks_are_valid() {
        let cat = catalog(&["a", "b"]);
        let f = frame(2, 2, vec![(0, mask(2, 2, &[(0, 0)])), (1, mask(2, 2, &[(1, 1)]))]);
        validate_frame(&f, &cat).unwrap();
    }

    #[test]
    fn shared_positive_is_rejected() {
        let cat = catalog(&["a", "b"]);
        let f = frame(2, 2, vec![(0, mask(2, 2, &[(0, 1)])), (1, mask(2, 2, &[(0, 1)]))]);
        match validate_frame(&f, &cat) {
            Err(Error::OverlappingPositives {
                class_a,
                class_b,
                row,
                col,
            }) => {
                assert_eq!((class_a.as_str(), class_b.as_str()), ("a", "b"));
                assert_eq!((row, col), (0, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mask_size_must_match_image() {
        let cat = catalog(&["a"]);
        let f = frame(12, 12, vec![(0, mask(10, 10, &[]))]);
        assert!(matches!(validate_frame(&f, &cat), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn positive_implies_negative_elsewhere() {
        let cat = catalog(&["a", "b"]);
        let f = frame(1, 2, vec![(0, mask(1, 2, &[(0, 0)]))]);
        let sup = derive_supervision(&f, &cat).unwrap();
        assert_eq!(sup.state(0, 0, 0), Supervision::Pos);
        assert_eq!(sup.state(1, 0, 0), Supervision::Neg);
        assert_eq!(sup.state(0, 0, 1), Supervision::Neg);
        assert_eq!(sup.state(1, 0, 1), Supervision::Ignore);
        assert_eq!(sup.annotated_flags(), &[true, false]);
    }

    #[test]
    fn fully_labeled_frame_has_no_ignore() {
        let cat = catalog(&["a", "b", "c"]);
        let f = frame(
            2,
            2,
            vec![
                (0, mask(2, 2, &[(0, 0)])),
                (1, mask(2, 2, &[(1, 0)])),
                (2, mask(2, 2, &[])),
            ],
        );
        let sup = derive_supervision(&f, &cat).unwrap();
        assert_eq!(sup.count(Supervision::Ignore), 0);
        for c in 0..3 {
            let m = &f.masks[&c];
            for (p, s) in sup.channel(c).iter().enumerate() {
                let expected = if m.as_slice()[p] {
                    Supervision::Pos
                } else {
                    Supervision::Neg
                };
                assert_eq!(*s, expected);
            }
        }
    }

    #[test]
    fn mask_only_demotes_implied_negatives() {
        let cat = catalog(&["a", "b"]);
        let f = frame(1, 2, vec![(0, mask(1, 2, &[(0, 0)]))]);
        let sup = derive_supervision(&f, &cat).unwrap().without_implied_negatives();
        assert_eq!(sup.state(1, 0, 0), Supervision::Ignore);
        assert_eq!(sup.state(0, 0, 1), Supervision::Neg);
    }

    #[test]
    fn background_channel_complements_union() {
        let cat = catalog(&["a", "b"]);
        let f = frame(1, 3, vec![(0, mask(1, 3, &[(0, 0)])), (1, mask(1, 3, &[(0, 1)]))]);
        let sup = derive_supervision(&f, &cat).unwrap();
        let bg = sup.with_background_channel().unwrap();
        assert_eq!(bg.channels(), 3);
        assert_eq!(
            bg.channel(2),
            &[Supervision::Neg, Supervision::Neg, Supervision::Pos]
        );
        let partial = frame(1, 3, vec![(0, mask(1, 3, &[]))]);
        assert!(derive_supervision(&partial, &cat)
            .unwrap()
            .with_background_channel()
            .is_err());
    }
}
