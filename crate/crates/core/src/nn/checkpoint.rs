//! Binary checkpoint encoding for [`MlpParams`].
//!
//! Layout, all little-endian:
//!
//! ```text
//! "FGMI" | version: u32 | layer_count: u32
//! per layer: out: u32 | in: u32 | activation: u8 | weights: f64[out*in] | bias: f64[out]
//! ```

use std::io::{Read, Write};

use super::matrix::Matrix;
use super::mlp::{Activation, Layer, MlpParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FGMI";
pub const VERSION: u32 = 1;

/// Little-endian reader that tracks its byte offset for error reporting.
pub struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        let mut filled = 0;
        while filled < N {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::format(
                        self.offset + filled as u64,
                        format!("truncated while reading {what}"),
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += N as u64;
        Ok(buf)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes::<1>(what)?[0])
    }

    pub fn u16_le(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(what)?))
    }

    pub fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    pub fn u32_be(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.bytes(what)?))
    }

    pub fn f64_le(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    pub fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64_le(what)).collect()
    }

    /// Errors unless the stream is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(self.offset, "trailing bytes")),
        }
    }
}

pub fn write_mlp<W: Write>(w: &mut W, params: &MlpParams) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.layers().len() as u32).to_le_bytes())?;
    for layer in params.layers() {
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        w.write_all(&[layer.activation.code()])?;
        for v in layer.weight.as_slice().iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_mlp<R: Read>(r: &mut ByteReader<R>) -> Result<MlpParams> {
    let start = r.offset();
    if &r.bytes::<4>("magic")? != MAGIC {
        return Err(Error::format(start, "bad magic, expected FGMI"));
    }
    let at = r.offset();
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let count = r.u32_le("layer count")? as usize;
    if count == 0 {
        return Err(Error::format(r.offset() - 4, "zero layers"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let out = r.u32_le("layer out dim")? as usize;
        let inp = r.u32_le("layer in dim")? as usize;
        let at = r.offset();
        let code = r.u8("activation")?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::format(at, format!("unknown activation code {code}")))?;
        let weights = r.f64_vec(out * inp, "weights")?;
        let bias = r.f64_vec(out, "bias")?;
        layers.push(Layer::new(Matrix::from_vec(out, inp, weights)?, bias, activation)?);
    }
    MlpParams::new(layers).map_err(|e| Error::format(r.offset(), e.to_string()))
}

pub fn mlp_to_bytes(params: &MlpParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_mlp(&mut buf, params).expect("writing to a Vec cannot fail");
    buf
}

pub fn mlp_from_bytes(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = ByteReader::new(bytes);
    let p = read_mlp(&mut r)?;
    r.expect_end()?;
    Ok(p)
}
