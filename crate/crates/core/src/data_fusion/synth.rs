//! Procedural stand-in for a fully annotated surgical dataset.
//!
//! Each frame shows a low-frequency background with one to four
//! non-overlapping blobs. Every class has its own texture (base colour,
//! stripe frequency and orientation). Classes in a confusable pair share the
//! texture and differ only by a small hue offset, so telling them apart needs
//! context rather than a single strong cue.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_fusion::manifest::{DatasetManifest, FrameEntry, Split, SubsetEntry};
use crate::data_fusion::raster;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, RgbImage};
use crate::label_algebra::{AnnotationFrame, ClassCatalog};

pub const FULL_SUBSET: &str = "full";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub name: String,
    pub classes: Vec<String>,
    pub confusable_pairs: Vec<(String, String)>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Hue difference between the two members of a confusable pair, as a
    /// fraction of the colour wheel.
    pub confusable_hue_offset: f64,
    pub max_blobs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            classes: default_class_names(4),
            confusable_pairs: vec![("A".into(), "B".into())],
            n_train: 200,
            n_val: 50,
            n_test: 50,
            height: 64,
            width: 64,
            seed: 7,
            confusable_hue_offset: 0.04,
            max_blobs: 4,
        }
    }
}

/// `A`, `B`, ... `Z`, then `C26`, `C27`, ...
pub fn default_class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            if i < 26 {
                char::from(b'A' + i as u8).to_string()
            } else {
                format!("C{i}")
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Texture {
    hue: f64,
    saturation: f64,
    value: f64,
    frequency: f64,
    orientation: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub id: String,
    pub split: Split,
    pub frame: AnnotationFrame,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<ClassCatalog> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::ConfigError(format!(
                "frames must be at least 32x32, got {}x{}",
                self.height, self.width
            )));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::ConfigError("every split needs at least one frame".into()));
        }
        if self.max_blobs == 0 {
            return Err(Error::ConfigError("max_blobs must be at least 1".into()));
        }
        let catalog = ClassCatalog::new(self.classes.clone())
            .map_err(|e| Error::ConfigError(e.to_string()))?;
        let mut paired = vec![false; catalog.len()];
        for (a, b) in &self.confusable_pairs {
            let ia = catalog.index_of(a).map_err(|e| Error::ConfigError(e.to_string()))?;
            let ib = catalog.index_of(b).map_err(|e| Error::ConfigError(e.to_string()))?;
            if ia == ib || paired[ia] || paired[ib] {
                return Err(Error::ConfigError(format!(
                    "confusable pair {a}:{b} must name two distinct, otherwise unpaired classes"
                )));
            }
            paired[ia] = true;
            paired[ib] = true;
        }
        Ok(catalog)
    }

    fn textures(&self, catalog: &ClassCatalog, rng: &mut ChaCha8Rng) -> Vec<Texture> {
        // A pair's second member copies its partner's texture family.
        let mut family_of: Vec<Option<usize>> = vec![None; catalog.len()];
        let mut partner_of: Vec<Option<usize>> = vec![None; catalog.len()];
        for (a, b) in &self.confusable_pairs {
            let ia = catalog.index_of(a).unwrap();
            let ib = catalog.index_of(b).unwrap();
            partner_of[ib] = Some(ia);
        }
        let mut families = 0;
        for c in 0..catalog.len() {
            if partner_of[c].is_none() {
                family_of[c] = Some(families);
                families += 1;
            }
        }

        let base: Vec<Texture> = (0..families)
            .map(|f| Texture {
                // evenly spaced hues, away from the background's brown
                hue: (0.2 + f as f64 / families as f64) % 1.0,
                saturation: rng.gen_range(0.45..0.65),
                value: rng.gen_range(0.6..0.8),
                frequency: rng.gen_range(2.0..6.0),
                orientation: rng.gen_range(0.0..PI),
                amplitude: rng.gen_range(14.0..26.0),
            })
            .collect();

        (0..catalog.len())
            .map(|c| match partner_of[c] {
                None => base[family_of[c].unwrap()],
                Some(p) => {
                    let mut t = base[family_of[p].unwrap()];
                    t.hue = (t.hue + self.confusable_hue_offset).rem_euclid(1.0);
                    t
                }
            })
            .collect()
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r * 255.0, g * 255.0, b * 255.0]
}

fn blob_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let scale = h.min(w) as f64;
    let cy = rng.gen_range(0.15..0.85) * h as f64;
    let cx = rng.gen_range(0.15..0.85) * w as f64;
    let ry = rng.gen_range(0.10..0.22) * scale;
    let rx = rng.gen_range(0.10..0.22) * scale;
    let rot = rng.gen_range(0.0..PI);
    let lobes = rng.gen_range(2..5) as f64;
    let wobble = rng.gen_range(0.0..0.2);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (sin, cos) = rot.sin_cos();
    Grid::from_fn(h, w, |r, c| {
        let dy = r as f64 + 0.5 - cy;
        let dx = c as f64 + 0.5 - cx;
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        let angle = v.atan2(u);
        let radius = 1.0 + wobble * (lobes * angle + phase).sin();
        (u / rx).powi(2) + (v / ry).powi(2) <= radius * radius
    })
}

fn render_frame(
    config: &SynthConfig,
    catalog: &ClassCatalog,
    textures: &[Texture],
    rng: &mut ChaCha8Rng,
) -> AnnotationFrame {
    let (h, w) = (config.height, config.width);
    let n_classes = catalog.len();

    let wanted = rng.gen_range(1..=config.max_blobs);
    let mut owner: Vec<Option<(usize, f64)>> = vec![None; h * w];
    let mut masks: Vec<Mask> = vec![Grid::filled(h, w, false); n_classes];
    let mut placed = 0;
    let mut attempts = 0;
    while placed < wanted && attempts < 60 {
        attempts += 1;
        let blob = blob_mask(h, w, rng);
        let area = blob.count_positive();
        if area < 12 {
            continue;
        }
        let overlaps = blob
            .as_slice()
            .iter()
            .zip(&owner)
            .any(|(&b, o)| b && o.is_some());
        if overlaps {
            continue;
        }
        let class = rng.gen_range(0..n_classes);
        let stripe_phase = rng.gen_range(0.0..2.0 * PI);
        for (p, &b) in blob.as_slice().iter().enumerate() {
            if b {
                owner[p] = Some((class, stripe_phase));
                masks[class].as_mut_slice()[p] = true;
            }
        }
        placed += 1;
    }

    let light = rng.gen_range(0.85..1.15);
    let bg_waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.0..PI),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(6.0..14.0),
            )
        })
        .collect();
    let bg_base = hsv_to_rgb(0.07, rng.gen_range(0.15..0.3), rng.gen_range(0.4..0.55));

    let image: RgbImage = Grid::from_fn(h, w, |r, c| {
        let y = r as f64 / h as f64;
        let x = c as f64 / w as f64;
        let (base, shade) = match owner[r * w + c] {
            Some((class, phase)) => {
                let t = &textures[class];
                let along = x * t.orientation.cos() + y * t.orientation.sin();
                let stripe = t.amplitude * (2.0 * PI * t.frequency * along + phase).sin();
                (hsv_to_rgb(t.hue, t.saturation, t.value), stripe)
            }
            None => {
                let mut s = 0.0;
                for &(f, o, ph, a) in &bg_waves {
                    s += a * (2.0 * PI * f * (x * o.cos() + y * o.sin()) + ph).sin();
                }
                (bg_base, s)
            }
        };
        let mut px = [0u8; 3];
        for k in 0..3 {
            let noise = rng.gen_range(-16.0..16.0);
            px[k] = ((base[k] + shade) * light + noise).round().clamp(0.0, 255.0) as u8;
        }
        px
    });

    AnnotationFrame::new(image, masks.into_iter().enumerate().collect())
}

/// Generates all frames in memory. Deterministic for a fixed config.
pub fn synth_frames(config: &SynthConfig) -> Result<Vec<SynthFrame>> {
    let catalog = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let textures = config.textures(&catalog, &mut rng);
    let mut out = Vec::with_capacity(config.n_train + config.n_val + config.n_test);
    let mut index = 0;
    for (split, n) in [
        (Split::Train, config.n_train),
        (Split::Val, config.n_val),
        (Split::Test, config.n_test),
    ] {
        for _ in 0..n {
            out.push(SynthFrame {
                id: format!("f{index:05}"),
                split,
                frame: render_frame(config, &catalog, &textures, &mut rng),
            });
            index += 1;
        }
    }
    Ok(out)
}

/// Generates the dataset under `root` as
/// `full/<split>/<id>.img.png` and `full/<split>/<id>.<class>.mask.png`, and
/// returns the fully labeled manifest (not yet written).
pub fn synth_generate(config: &SynthConfig, root: &Path) -> Result<DatasetManifest> {
    let catalog = config.validate()?;
    let frames = synth_frames(config)?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in &frames {
        let dir = format!("{FULL_SUBSET}/{}", f.split);
        let image = format!("{dir}/{}.img.png", f.id);
        raster::write_rgb(&root.join(&image), &f.frame.image)?;
        let mut masks = BTreeMap::new();
        for (&class, mask) in &f.frame.masks {
            let name = catalog.name(class);
            let rel = format!("{dir}/{}.{name}.mask.png", f.id);
            raster::write_mask(&root.join(&rel), mask)?;
            masks.insert(name.to_string(), rel);
        }
        entries.push(FrameEntry {
            id: f.id.clone(),
            split: f.split,
            image,
            masks,
        });
    }
    let manifest = DatasetManifest {
        name: config.name.clone(),
        catalog: catalog.clone(),
        subsets: vec![SubsetEntry {
            name: FULL_SUBSET.into(),
            annotated_classes: catalog.names().to_vec(),
            frames: entries,
        }],
        root: root.to_path_buf(),
    };
    manifest.validate()?;
    Ok(manifest)
}
