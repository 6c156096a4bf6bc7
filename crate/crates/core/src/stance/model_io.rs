//! Binary model persistence: versioned header, backend descriptor, raw
//! little-endian weights, and an FNV-64 checksum trailer. Round-trips are
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::hash::fnv1a64;

use super::model::{StanceModel, TrainMetadata};
use super::{BackendConfig, StanceError};

pub const STANCE_MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SBST";

pub fn save_model(model: &StanceModel, path: &Path) -> Result<(), StanceError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&STANCE_MODEL_FORMAT_VERSION.to_le_bytes());
    match &model.backend {
        BackendConfig::HashedNgram { dim, ngram_orders } => {
            buf.push(0);
            buf.extend_from_slice(&(*dim as u64).to_le_bytes());
            buf.push(ngram_orders.len() as u8);
            for &o in ngram_orders {
                buf.push(o as u8);
            }
        }
        BackendConfig::PrecomputedEmbedding { dim } => {
            buf.push(1);
            buf.extend_from_slice(&(*dim as u64).to_le_bytes());
            buf.push(0);
        }
    }
    buf.extend_from_slice(&(model.embed_dim as u64).to_le_bytes());
    buf.extend_from_slice(&model.dropout_p.to_le_bytes());
    buf.extend_from_slice(&model.metadata.seed.to_le_bytes());
    buf.extend_from_slice(&model.metadata.best_step.to_le_bytes());
    buf.extend_from_slice(&model.metadata.best_val_accuracy.to_le_bytes());
    buf.extend_from_slice(&(model.projection.len() as u64).to_le_bytes());
    for (idx, row) in &model.projection {
        buf.extend_from_slice(&idx.to_le_bytes());
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in model
        .w1
        .iter()
        .chain(&model.b1)
        .chain(&model.w2)
        .chain(&model.b2)
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StanceError> {
        if self.pos + n > self.bytes.len() {
            return Err(StanceError::CorruptFile("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, StanceError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, StanceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StanceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, StanceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, StanceError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

pub fn load_model(path: &Path) -> Result<StanceModel, StanceError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(StanceError::CorruptFile("file too short".into()));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    if fnv1a64(payload) != stored {
        return Err(StanceError::CorruptFile("checksum mismatch".into()));
    }
    let mut cur = Cursor {
        bytes: payload,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(StanceError::CorruptFile("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != STANCE_MODEL_FORMAT_VERSION {
        return Err(StanceError::VersionMismatch {
            expected: STANCE_MODEL_FORMAT_VERSION,
            got: version,
        });
    }
    let tag = cur.u8()?;
    let dim = cur.u64()? as usize;
    let n_orders = cur.u8()? as usize;
    let mut orders = Vec::with_capacity(n_orders);
    for _ in 0..n_orders {
        orders.push(cur.u8()? as usize);
    }
    let backend = match tag {
        0 => BackendConfig::HashedNgram {
            dim,
            ngram_orders: orders,
        },
        1 => BackendConfig::PrecomputedEmbedding { dim },
        other => {
            return Err(StanceError::CorruptFile(format!(
                "unknown backend tag {other}"
            )))
        }
    };
    let embed_dim = cur.u64()? as usize;
    let dropout_p = cur.f64()?;
    let seed = cur.u64()?;
    let best_step = cur.u64()?;
    let best_val_accuracy = cur.f64()?;
    let n_rows = cur.u64()? as usize;
    let mut projection = BTreeMap::new();
    for _ in 0..n_rows {
        let idx = cur.u32()?;
        projection.insert(idx, cur.f64_vec(embed_dim)?);
    }
    let w1 = cur.f64_vec(embed_dim * embed_dim)?;
    let b1 = cur.f64_vec(embed_dim)?;
    let w2 = cur.f64_vec(embed_dim * 2)?;
    let b2v = cur.f64_vec(2)?;
    if cur.pos != payload.len() {
        return Err(StanceError::CorruptFile("trailing bytes".into()));
    }
    Ok(StanceModel {
        backend,
        embed_dim,
        dropout_p,
        projection,
        w1,
        b1,
        w2,
        b2: [b2v[0], b2v[1]],
        metadata: TrainMetadata {
            seed,
            best_step,
            best_val_accuracy,
        },
    })
}
