//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//!
//! | field            | size            |
//! |------------------|-----------------|
//! | magic `CSEGCKPT` | 8               |
//! | format version   | 4 (`u32`)       |
//! | catalog digest   | 32              |
//! | trial tag        | 1               |
//! | member class     | 4 (`u32`, `u32::MAX` = none) |
//! | background flag  | 1               |
//! | depth            | 4 (`u32`)       |
//! | base width       | 4 (`u32`)       |
//! | output channels  | 4 (`u32`)       |
//! | parameter count  | 8 (`u64`)       |
//! | parameters       | 4 each (`f32`)  |
//! | SHA-256 of all preceding bytes | 32 |

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::label_algebra::ClassCatalog;
use crate::model::{SegmentationModel, TinyConfig, TinyEncoderDecoder};
use crate::trainer::Trial;

pub const MAGIC: &[u8; 8] = b"CSEGCKPT";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 32 + 1 + 4 + 1 + 4 + 4 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelKind {
    pub trial: Trial,
    /// Catalog index an ensemble member was trained for.
    pub member_class: Option<usize>,
    /// The last output channel is an explicit background channel.
    pub background_channel: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub model: TinyEncoderDecoder,
}

fn trial_tag(trial: Trial) -> u8 {
    match trial {
        Trial::Il => 0,
        Trial::En => 1,
        Trial::Fs => 2,
        Trial::IlMaskOnly => 3,
    }
}

fn trial_from_tag(tag: u8) -> Result<Trial> {
    Ok(match tag {
        0 => Trial::Il,
        1 => Trial::En,
        2 => Trial::Fs,
        3 => Trial::IlMaskOnly,
        other => return Err(Error::CorruptCheckpoint(format!("unknown trial tag {other}"))),
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, catalog: &ClassCatalog) -> Vec<u8> {
    let model = &checkpoint.model;
    let cfg = model.config();
    let params = model.params();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&catalog.digest());
    out.push(trial_tag(checkpoint.kind.trial));
    let member = checkpoint.kind.member_class.map_or(u32::MAX, |c| c as u32);
    out.extend_from_slice(&member.to_le_bytes());
    out.push(u8::from(checkpoint.kind.background_channel));
    out.extend_from_slice(&(cfg.depth as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.base_width as u32).to_le_bytes());
    out.extend_from_slice(&(model.out_channels() as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest: [u8; 32] = Sha256::digest(&out).into();
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and verifies a checkpoint. Refuses checkpoints written for a
/// different catalog.
pub fn load_checkpoint(bytes: &[u8], catalog: &ClassCatalog) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let digest = r.take(32)?;
    let trial = trial_from_tag(r.u8()?)?;
    let member = r.u32()?;
    let background_channel = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::CorruptCheckpoint(format!("bad background flag {other}"))),
    };
    let config = TinyConfig {
        depth: r.u32()? as usize,
        base_width: r.u32()? as usize,
    };
    let out_channels = r.u32()? as usize;
    let n_params = r.u64()?;

    let body_end = r.pos as u64 + n_params.saturating_mul(4);
    if body_end + DIGEST_LEN as u64 != bytes.len() as u64 {
        return Err(Error::CorruptCheckpoint(format!(
            "{} bytes, header announces {}",
            bytes.len(),
            body_end.saturating_add(DIGEST_LEN as u64)
        )));
    }
    let body_end = body_end as usize;
    let expected: [u8; 32] = Sha256::digest(&bytes[..body_end]).into();
    if bytes[body_end..] != expected {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    if digest != catalog.digest() {
        return Err(Error::CatalogMismatch);
    }

    let mut model = TinyEncoderDecoder::zeros(config, out_channels)
        .map_err(|e| Error::CorruptCheckpoint(format!("architecture: {e}")))?;
    if model.params().len() as u64 != n_params {
        return Err(Error::CorruptCheckpoint(format!(
            "{n_params} parameters stored, architecture needs {}",
            model.params().len()
        )));
    }
    for p in model.params_mut() {
        *p = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
    }
    let member_class = (member != u32::MAX).then_some(member as usize);
    Ok(Checkpoint {
        kind: ModelKind {
            trial,
            member_class,
            background_channel,
        },
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn sample() -> (Checkpoint, ClassCatalog) {
        let cat = ClassCatalog::new(["a", "b"]).unwrap();
        let model = TinyEncoderDecoder::new(TinyConfig { depth: 2, base_width: 4 }, 2, 3).unwrap();
        let ck = Checkpoint {
            kind: ModelKind {
                trial: Trial::Il,
                member_class: None,
                background_channel: false,
            },
            model,
        };
        (ck, cat)
    }

    #[test]
    fn round_trip_preserves_outputs() {
        let (ck, cat) = sample();
        let bytes = save_checkpoint(&ck, &cat);
        let back = load_checkpoint(&bytes, &cat).unwrap();
        assert_eq!(back.kind, ck.kind);
        let x = Tensor::from_vec(1, 3, 8, 8, (0..192).map(|i| i as f32 / 192.0).collect()).unwrap();
        let a = ck.model.forward(&x).unwrap();
        let b = back.model.forward(&x).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() <= 1e-7);
        }
    }

    #[test]
    fn truncation_is_detected() {
        let (ck, cat) = sample();
        let bytes = save_checkpoint(&ck, &cat);
        for cut in [0, 5, HEADER_LEN - 1, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(
                matches!(load_checkpoint(&bytes[..cut], &cat), Err(Error::CorruptCheckpoint(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (ck, cat) = sample();
        let mut bytes = save_checkpoint(&ck, &cat);
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        match load_checkpoint(&bytes, &cat) {
            Err(Error::CorruptCheckpoint(msg)) => assert!(msg.contains("version 7"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flipped_bit_and_foreign_catalog() {
        let (ck, cat) = sample();
        let mut bytes = save_checkpoint(&ck, &cat);
        let other = ClassCatalog::new(["a", "c"]).unwrap();
        assert!(matches!(load_checkpoint(&bytes, &other), Err(Error::CatalogMismatch)));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(load_checkpoint(&bytes, &cat), Err(Error::CorruptCheckpoint(_))));
    }
}
