//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SHIPCKPT"
//! version    u32
//! meta_len   u64, then meta_len bytes of canonical JSON
//! count      u32 named arrays, each:
//!   name_len u32, name bytes (UTF-8)
//!   ndims    u32, dims as u64 each
//!   values   f64 each, row-major
//! crc32      u32 over every preceding byte
//! ```
//!
//! The JSON has sorted keys and round-trip float formatting, so loading a
//! file and saving it again reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;
use crate::trainer::{Model, TrainConfig};

pub const MAGIC: &[u8; 8] = b"SHIPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankMeta {
    num_classes: usize,
    centers_per_class: usize,
    dim: usize,
    scale: f64,
    delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    class_names: Vec<String>,
    epoch: usize,
    step: u64,
    /// Every random stream is derived from this seed and the epoch counter.
    rng_seed: u64,
    bank: BankMeta,
}

/// Serializes a model to the checkpoint byte layout.
pub fn encode<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let meta = Meta {
        config: model.config.clone(),
        class_names: model.class_names.clone(),
        epoch: model.epoch,
        step: model.step,
        rng_seed: model.config.seed,
        bank: BankMeta {
            num_classes: model.bank.num_classes,
            centers_per_class: model.bank.centers_per_class,
            dim: model.bank.dim(),
            scale: model.bank.scale.as_f64(),
            delta: model.bank.delta.as_f64(),
        },
    };
    // Round-tripping through `Value` sorts object keys.
    let json = serde_json::to_string(&serde_json::to_value(&meta)?)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("length overflows usize".into()))
    }
}

/// Parses checkpoint bytes. Magic and version are checked first, then the
/// checksum, before anything else is interpreted.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found, expected: FORMAT_VERSION });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 12 };
    let meta_len = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
    let mut model = Model::<T>::new(&meta.config, meta.class_names)?;
    let b = &meta.bank;
    if (b.num_classes, b.centers_per_class, b.dim) != (model.bank.num_classes, model.bank.centers_per_class, model.bank.dim())
        || b.scale != model.bank.scale.as_f64()
        || b.delta != model.bank.delta.as_f64()
    {
        return Err(Error::Corrupt("center bank metadata disagrees with config".into()));
    }
    model.epoch = meta.epoch;
    model.step = meta.step;

    let count = r.u32()? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Corrupt(format!("expected {} arrays, found {count}", params.len())));
    }
    for (expected_name, target) in params.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Corrupt("array name is not UTF-8".into()))?;
        if name != expected_name {
            return Err(Error::Corrupt(format!("expected array {expected_name}, found {name}")));
        }
        let ndims = r.u32()? as usize;
        let dims = (0..ndims).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if dims != target.shape() {
            return Err(Error::Corrupt(format!("array {name} has shape {dims:?}, expected {:?}", target.shape())));
        }
        let raw = r.take(target.len() * 8)?;
        let values: Vec<T> = raw.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        **target = Tensor::new(dims, values)?;
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    drop(params);
    Ok(model)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
