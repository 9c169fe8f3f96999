//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic    8 bytes   "CDBCKPT\0"
//! version  u32       1
//! cfg_len  u32       length of the config text
//! config   cfg_len   ModelConfig as `key = value` lines (UTF-8)
//! count    u32       number of parameter blobs
//! blobs    count x { name_len u32, name (UTF-8), rank u32,
//!                    dims rank x u64, values prod(dims) x f64 }
//! ```

use std::path::Path;

use super::layers::Params;
use super::unet::{ModelConfig, Unet};
use super::Tensor;
use crate::error::{Error, Result};
use crate::imaging::io::write_atomic;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CDBCKPT\0";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode_checkpoint<T: Scalar>(model: &Unet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config().to_text();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    let params = model.params();
    put_u32(&mut out, params.len());
    for (name, value) in params.names().iter().zip(params.values()) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.shape().len());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
            .map_err(|_| Error::parse(self.path, "dimension overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::parse(self.path, "invalid UTF-8"))
    }
}

/// Decodes a checkpoint; `path` is only used in error messages.
pub fn decode_checkpoint<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Unet<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::parse(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::parse(path, format!("unsupported checkpoint version {version}")));
    }
    let cfg_text = r.string()?;
    let config = ModelConfig::parse(path, &cfg_text)?;
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
        params.add(name, Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(path, "trailing bytes after checkpoint"));
    }
    let mut model = Unet::new(config, 0)?;
    model
        .set_params(params)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Unet<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Unet<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
