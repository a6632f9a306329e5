//! Model checkpoints.
//!
//! Layout (all little-endian):
//!
//! | field                        | type            |
//! |------------------------------|-----------------|
//! | magic `AMCK`                 | 4 bytes         |
//! | version                      | u32             |
//! | head tag, classes            | u32, u32        |
//! | input dim, width, depth      | u32 ×3          |
//! | dropout, l2, bn momentum, eps| f64 ×4          |
//! | rng seed                     | u64             |
//! | normalizer mean, std         | f64 × dim each  |
//! | trainable parameters         | u64 count, f64s |
//! | running mean, var per block  | f64 × width each|
//! | SHA-256 of everything above  | 32 bytes        |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sha256_hex;
use crate::bagnet::{BagModel, HeadKind, ModelConfig, Normalizer, ParamLayout, RunningStats};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A file recorded in a run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory when recorded through a manifest.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Format("checkpoint fields overrun the payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn encode_checkpoint(model: &BagModel) -> Vec<u8> {
    let c = &model.config;
    let classes = match c.head {
        HeadKind::MultiClassSoftmax { classes } => classes as u32,
        _ => 0,
    };
    let mut w = Writer(Vec::with_capacity(128 + 8 * model.params.len()));
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(c.head.tag());
    w.u32(classes);
    w.u32(c.input_dim as u32);
    w.u32(c.width as u32);
    w.u32(c.depth as u32);
    w.f64s(&[c.dropout, c.l2, c.bn_momentum, c.bn_eps]);
    w.u64(model.rng_seed);
    w.f64s(&model.norm.mean);
    w.f64s(&model.norm.std);
    w.u64(model.params.len() as u64);
    w.f64s(&model.params);
    for r in &model.running {
        w.f64s(&r.mean);
        w.f64s(&r.var);
    }
    let digest = super::sha256(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<BagModel> {
    if bytes.len() < 8 {
        return Err(Error::Integrity(format!(
            "checkpoint truncated to {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(Error::Integrity(
            "checkpoint truncated before its digest".into(),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if super::sha256(body).as_slice() != digest {
        return Err(Error::Integrity(
            "checkpoint digest mismatch (corrupt or truncated file)".into(),
        ));
    }

    let mut r = Reader { buf: body, pos: 8 };
    let tag = r.u32()?;
    let classes = r.u32()? as usize;
    let head = HeadKind::from_tag(tag, classes)
        .ok_or_else(|| Error::Format(format!("unknown head tag {tag}")))?;
    let input_dim = r.u32()? as usize;
    let width = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let config = ModelConfig {
        input_dim,
        width,
        depth,
        head,
        dropout: r.f64()?,
        l2: r.f64()?,
        bn_momentum: r.f64()?,
        bn_eps: r.f64()?,
    };
    let rng_seed = r.u64()?;
    // Validates the config and fixes every length below.
    let mut model = BagModel::new(config, rng_seed)
        .map_err(|e| Error::Format(format!("bad model config: {e}")))?;
    let din = model.config.net_input_dim();
    model.norm = Normalizer {
        mean: r.f64s(din)?,
        std: r.f64s(din)?,
    };
    let n_params = r.u64()? as usize;
    let layout = ParamLayout::new(&model.config);
    if n_params != layout.total {
        return Err(Error::Format(format!(
            "checkpoint has {n_params} parameters, its topology needs {}",
            layout.total
        )));
    }
    model.params = r.f64s(n_params)?;
    model.running = layout
        .hidden
        .iter()
        .map(|h| {
            Ok(RunningStats {
                mean: r.f64s(h.width)?,
                var: r.f64s(h.width)?,
            })
        })
        .collect::<Result<_>>()?;
    if r.pos != body.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in checkpoint",
            body.len() - r.pos
        )));
    }
    Ok(model)
}

/// Write a checkpoint and describe it for a manifest.
pub fn save_checkpoint(model: &BagModel, path: &Path) -> Result<ArtifactEntry> {
    let bytes = encode_checkpoint(model);
    std::fs::write(path, &bytes)?;
    Ok(ArtifactEntry {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<BagModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Load a checkpoint that must carry `expected` as its head (for a
/// multi-class head, with the same class count).
pub fn load_checkpoint_as(path: &Path, expected: HeadKind) -> Result<BagModel> {
    let model = load_checkpoint(path)?;
    if model.head() != expected {
        return Err(Error::HeadMismatch {
            expected: expected.to_string(),
            found: model.head().to_string(),
        });
    }
    Ok(model)
}
