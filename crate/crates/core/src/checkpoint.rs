//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FDP1" | version u32 | num_classes u32 | config_len u32 | config text
//! | param_count u32 | params... | crc32 u32
//! param: name_len u32 | name | dtype u8 | rank u32 | dims u64 × rank | payload
//! ```
//!
//! The checksum covers every byte before it.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{FdpError, Result};
use crate::model::FdpModel;
use crate::numerics::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"FDP1";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// A trained model together with the configuration that built it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: FdpModel<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| FdpError::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode<T: Scalar>(config: &RunConfig, model: &FdpModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, model.num_classes())?;
    let text = config.to_text();
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let entries = model.params.entries();
    put_u32(&mut out, entries.len())?;
    for e in entries {
        put_u32(&mut out, e.name.len())?;
        out.extend_from_slice(e.name.as_bytes());
        out.push(T::DTYPE);
        put_u32(&mut out, e.value.rank())?;
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in e.value.data() {
            match T::DTYPE {
                DTYPE_F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FdpError::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| FdpError::Checkpoint(format!("dimension {v} too large")))
    }

    fn string(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| FdpError::Checkpoint("non-UTF-8 text".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(FdpError::Checkpoint("not an FDP1 checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(FdpError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(FdpError::Checkpoint(format!("unsupported version {version}")));
    }
    let num_classes = r.u32()?;
    let config = RunConfig::parse(r.string()?)?;
    let mut model = FdpModel::<f32>::new(config.model(num_classes), config.seed)?;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(FdpError::Checkpoint(format!(
            "{count} tensors stored, the configured model has {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name = r.string()?.to_string();
        let dtype = r.take(1)?[0];
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = match dtype {
            DTYPE_F32 => r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            DTYPE_F64 => r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
            d => return Err(FdpError::Checkpoint(format!("unknown dtype code {d} for {name}"))),
        };
        let id = model
            .params
            .id(&name)
            .ok_or_else(|| FdpError::Checkpoint(format!("unexpected tensor {name}")))?;
        if model.params.get(id).shape() != shape.as_slice() {
            return Err(FdpError::Checkpoint(format!(
                "{name}: stored shape {shape:?}, model expects {:?}",
                model.params.get(id).shape()
            )));
        }
        model.params.set(id, Tensor::from_vec(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(FdpError::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { config, model })
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, config: &RunConfig, model: &FdpModel<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(config, model)?).map_err(|e| FdpError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FdpError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> (RunConfig, FdpModel<f32>) {
        let config = RunConfig::tiny();
        let model = FdpModel::new(config.model(3), 5).unwrap();
        (config, model)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (config, model) = micro();
        let a = encode(&config, &model).unwrap();
        let back = decode(&a).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(encode(&back.config, &back.model).unwrap(), a);
    }

    #[test]
    fn corruption_is_detected() {
        let (config, model) = micro();
        let mut a = encode(&config, &model).unwrap();
        let mid = a.len() / 2;
        a[mid] ^= 1;
        assert!(matches!(decode(&a), Err(FdpError::Checkpoint(m)) if m.contains("checksum")));
        assert!(decode(b"FDP0....").is_err());
        assert!(decode(&[]).is_err());
    }
}
