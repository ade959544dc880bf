//! Dataset manifests: which subsets exist, what each annotates, and where the
//! image and mask files of every frame live.
//!
//! A manifest is a JSON document. Paths are relative to the directory holding
//! the manifest file.
//!
//! ```json
//! {
//!   "name": "synthetic",
//!   "catalog": { "classes": ["A", "B"] },
//!   "subsets": [
//!     {
//!       "name": "full",
//!       "annotated_classes": ["A", "B"],
//!       "frames": [
//!         {
//!           "id": "f00000",
//!           "split": "train",
//!           "image": "full/train/f00000.img.png",
//!           "masks": { "A": "full/train/f00000.A.mask.png", "B": "full/train/f00000.B.mask.png" }
//!         }
//!       ]
//!     }
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_fusion::raster;
use crate::error::{Error, Result};
use crate::label_algebra::{AnnotationFrame, ClassCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::ConfigError(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub id: String,
    pub split: Split,
    pub image: String,
    /// Mask path per annotated class name. A frame is annotated for exactly
    /// the classes listed here.
    pub masks: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetEntry {
    pub name: String,
    pub annotated_classes: Vec<String>,
    pub frames: Vec<FrameEntry>,
}

impl SubsetEntry {
    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameEntry> {
        self.frames.iter().filter(move |f| f.split == split)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub catalog: ClassCatalog,
    pub subsets: Vec<SubsetEntry>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

/// A frame read from disk, tagged with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub subset: String,
    pub id: String,
    pub split: Split,
    pub frame: AnnotationFrame,
}

impl DatasetManifest {
    /// Schema checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        let mut subset_names = HashSet::new();
        for subset in &self.subsets {
            if subset.name.is_empty() {
                return Err(Error::SchemaError("subset with empty name".into()));
            }
            if !subset_names.insert(subset.name.as_str()) {
                return Err(Error::SchemaError(format!("duplicate subset `{}`", subset.name)));
            }
            let mut annotated = HashSet::new();
            for class in &subset.annotated_classes {
                self.catalog.index_of(class).map_err(|_| {
                    Error::SchemaError(format!(
                        "subset `{}` annotates `{class}`, which is not in the catalog",
                        subset.name
                    ))
                })?;
                if !annotated.insert(class.as_str()) {
                    return Err(Error::SchemaError(format!(
                        "subset `{}` lists `{class}` twice",
                        subset.name
                    )));
                }
            }
            let mut seen: HashMap<&str, Split> = HashMap::new();
            for frame in &subset.frames {
                if let Some(prev) = seen.insert(frame.id.as_str(), frame.split) {
                    return Err(Error::SchemaError(format!(
                        "frame `{}` of subset `{}` is listed in splits {} and {}",
                        frame.id, subset.name, prev, frame.split
                    )));
                }
                for class in frame.masks.keys() {
                    if !annotated.contains(class.as_str()) {
                        return Err(Error::SchemaError(format!(
                            "frame `{}` of subset `{}` has a mask for `{class}`, which the subset does not annotate",
                            frame.id, subset.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::SchemaError(e.to_string()))?;
        manifest.root = root.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster::ensure_parent(path)?;
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn subset(&self, name: &str) -> Option<&SubsetEntry> {
        self.subsets.iter().find(|s| s.name == name)
    }

    /// Every referenced image and mask file must exist.
    pub fn verify_files(&self) -> Result<()> {
        for subset in &self.subsets {
            for frame in &subset.frames {
                for rel in std::iter::once(&frame.image).chain(frame.masks.values()) {
                    let path = self.resolve(rel);
                    if !path.is_file() {
                        return Err(Error::MissingFile(path));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn frame_count(&self, split: Split) -> usize {
        self.subsets.iter().map(|s| s.frames_in(split).count()).sum()
    }

    /// True when every frame of every subset carries a mask for every class.
    pub fn is_fully_labeled(&self) -> bool {
        self.subsets.iter().all(|s| {
            s.frames
                .iter()
                .all(|f| self.catalog.names().iter().all(|c| f.masks.contains_key(c)))
        })
    }

    pub fn load_frame(&self, entry: &FrameEntry) -> Result<AnnotationFrame> {
        let image = raster::read_rgb(&self.resolve(&entry.image))?;
        let mut masks = BTreeMap::new();
        for (class, rel) in &entry.masks {
            let idx = self.catalog.index_of(class)?;
            masks.insert(idx, raster::read_mask(&self.resolve(rel))?);
        }
        Ok(AnnotationFrame::new(image, masks))
    }

    /// Loads the frames of one split from every subset, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<LoadedFrame>> {
        let mut out = Vec::new();
        for subset in &self.subsets {
            for entry in subset.frames_in(split) {
                out.push(LoadedFrame {
                    subset: subset.name.clone(),
                    id: entry.id.clone(),
                    split,
                    frame: self.load_frame(entry)?,
                });
            }
        }
        Ok(out)
    }
}

/// Reads, validates and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::from_json(&text, root)?;
    manifest.verify_files()?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Every source frame appears in every binary subset.
    #[default]
    Replicate,
    /// Each source frame goes to exactly one binary subset, round-robin per
    /// split, so the subsets hold disjoint images.
    Partition,
}

/// Turns a manifest with one fully annotated subset into one binary subset
/// per class. Frames keep their image and the selected class's mask file.
pub fn split_full_to_binary(manifest: &DatasetManifest, mode: SplitMode) -> Result<DatasetManifest> {
    let source = match manifest.subsets.as_slice() {
        [only] => only,
        other => {
            return Err(Error::SchemaError(format!(
                "expected exactly one fully labeled subset, found {}",
                other.len()
            )))
        }
    };
    let classes = manifest.catalog.names();
    for frame in &source.frames {
        if let Some(missing) = classes.iter().find(|c| !frame.masks.contains_key(*c)) {
            return Err(Error::NotFullyLabeled(format!(
                "frame `{}` of subset `{}` has no mask for `{missing}`",
                frame.id, source.name
            )));
        }
    }

    let mut subsets: Vec<SubsetEntry> = classes
        .iter()
        .map(|class| SubsetEntry {
            name: class.clone(),
            annotated_classes: vec![class.clone()],
            frames: Vec::new(),
        })
        .collect();

    let mut next_in_split: HashMap<Split, usize> = HashMap::new();
    for frame in &source.frames {
        let targets: Vec<usize> = match mode {
            SplitMode::Replicate => (0..classes.len()).collect(),
            SplitMode::Partition => {
                let slot = next_in_split.entry(frame.split).or_insert(0);
                let t = *slot % classes.len();
                *slot += 1;
                vec![t]
            }
        };
        for t in targets {
            let class = &classes[t];
            subsets[t].frames.push(FrameEntry {
                id: frame.id.clone(),
                split: frame.split,
                image: frame.image.clone(),
                masks: BTreeMap::from([(class.clone(), frame.masks[class].clone())]),
            });
        }
    }

    let out = DatasetManifest {
        name: format!("{}-binary", manifest.name),
        catalog: manifest.catalog.clone(),
        subsets,
        root: manifest.root.clone(),
    };
    out.validate()?;
    Ok(out)
}
