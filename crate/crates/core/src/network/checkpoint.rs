//! `IFZT` checkpoint container.
//!
//! Little-endian: magic, `u16` version, config block (`u32` C, S, M, R, H;
//! `f32` dropout; `u8` consequent mode, filter order, feature mode), then
//! named tensors until end of file: `u16` name length, UTF-8 name, `u8`
//! rank, `u32` dims, row-major `f64` data.

use std::fs;
use std::path::Path;

use super::{FeatureMode, FilterOrder, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::fuzzy::ConsequentMode;
use crate::params::Parameters;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IFZT";
const CHECKPOINT_VERSION: u16 = 1;

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let cfg = &params.config;
    let mut out = Vec::with_capacity(32 + 8 * params.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.channels, cfg.samples, cfg.classes, cfg.rules, cfg.hidden] {
        let v = u32::try_from(v).map_err(|_| Error::Shape(format!("dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    out.push(cfg.consequent_mode.code());
    out.push(cfg.filter_order.code());
    out.push(cfg.feature_mode.code());
    for t in params.tensors() {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Cursor { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"IFZT\"")));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.u32("config")? as usize;
    }
    let b = r.take(4, "dropout")?;
    let dropout_rate = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let at = r.pos;
    let consequent_mode = ConsequentMode::from_code(r.u8("consequent mode")?)
        .ok_or_else(|| Error::format(at as u64, "unknown consequent mode"))?;
    let filter_order = FilterOrder::from_code(r.u8("filter order")?)
        .ok_or_else(|| Error::format(at as u64 + 1, "unknown filter order"))?;
    let feature_mode = FeatureMode::from_code(r.u8("feature mode")?)
        .ok_or_else(|| Error::format(at as u64 + 2, "unknown feature mode"))?;
    let config = ModelConfig {
        channels: dims[0],
        samples: dims[1],
        classes: dims[2],
        rules: dims[3],
        hidden: dims[4],
        dropout_rate,
        consequent_mode,
        filter_order,
        feature_mode,
    };
    config
        .validate()
        .map_err(|e| Error::format(6, format!("invalid config block: {e}")))?;

    let mut params = ModelParams::init(config, 0)?;
    {
        let mut slots = params.tensors_mut();
        for slot in slots.iter_mut() {
            let start = r.pos as u64;
            let len = r.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::format(start, "tensor name is not UTF-8"))?;
            if name != slot.name {
                return Err(Error::format(
                    start,
                    format!("expected tensor `{}`, found `{name}`", slot.name),
                ));
            }
            let rank = r.u8("tensor rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != slot.shape {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {shape:?}, config implies {:?}",
                    slot.shape
                )));
            }
            let raw = r.take(8 * slot.data.len(), "tensor data")?;
            for (dst, chunk) in slot.data.iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} unexpected bytes after last tensor", bytes.len() - r.pos),
        ));
    }
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
