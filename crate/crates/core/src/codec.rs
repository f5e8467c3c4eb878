//! Little helpers for the binary container formats (checkpoints, feature
//! caches, IDX). Readers validate every length against the remaining bytes
//! before allocating.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::AffineLayer;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reads a whole file, transparently inflating gzip (`1f 8b` magic).
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    inflate_if_gzip(raw, &path.display().to_string())
}

pub fn inflate_if_gzip(raw: Vec<u8>, context: &str) -> Result<Vec<u8>> {
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(context, 0, format!("corrupt gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Lowercase hex SHA-256 of the concatenation of `parts`.
pub fn sha256_hex<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], context: impl Into<String>) -> Self {
        Self {
            bytes,
            pos: 0,
            context: context.into(),
        }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.context.clone(), self.pos as u64, message)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.error(format!(
                "truncated: need {n} bytes, {} remain",
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let at = self.pos;
        let got = self.take(magic.len())?;
        if got != magic {
            return Err(Error::format(
                self.context.clone(),
                at as u64,
                format!("bad magic {:02x?}, expected {:02x?}", got, magic),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// `n` little-endian f64 values, length checked before allocation.
    pub fn f64_vec<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| self.error("length overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    pub fn f32_vec<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.error("length overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    /// Layer payload: `out_dim u32, in_dim u32`, weights then bias as f64 LE.
    pub fn affine<T: Scalar>(&mut self) -> Result<AffineLayer<T>> {
        let out_dim = self.u32_le()? as usize;
        let in_dim = self.u32_le()? as usize;
        if out_dim == 0 || in_dim == 0 {
            return Err(self.error("layer with a zero dimension"));
        }
        let n = out_dim
            .checked_mul(in_dim)
            .and_then(|w| w.checked_add(out_dim))
            .ok_or_else(|| self.error("layer size overflow"))?;
        if n.saturating_mul(8) > self.remaining() {
            return Err(self.error(format!("truncated layer payload ({out_dim}x{in_dim})")));
        }
        let w = self.f64_vec(out_dim * in_dim)?;
        let b = self.f64_vec(out_dim)?;
        AffineLayer::new(Tensor::new(vec![out_dim, in_dim], w)?, Tensor::from_vec(b))
    }
}

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64s<T: Scalar>(buf: &mut Vec<u8>, values: &[T]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

pub fn put_affine<T: Scalar>(buf: &mut Vec<u8>, layer: &AffineLayer<T>) {
    put_u32(buf, layer.out_dim() as u32);
    put_u32(buf, layer.in_dim() as u32);
    put_f64s(buf, layer.weights().data());
    put_f64s(buf, layer.bias().data());
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
