//! Little-endian binary containers for fields (`WFLD`) and kernels (`WKRN`).
//!
//! Layout: 4-byte magic, `u32` version, `u32` dimension, `u32` size (`n` or
//! `n_K`), `d` origin values and `d` edge lengths as `f64`, then the nodal
//! values as `f64` in lexicographic order. Kernels store the stencil origin
//! `-(n_K-1)/2` and edge length `n_K` in grid units.

use std::io::{Read, Write};
use std::path::Path;

use super::{GridSpec, NodalField, StencilKernel};
use crate::error::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"WFLD";
pub const KERNEL_MAGIC: &[u8; 4] = b"WKRN";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.inner
            .read_exact(&mut m)
            .map_err(|_| Error::Corrupt("truncated header".into()))?;
        if &m != expected {
            return Err(Error::Corrupt(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Corrupt("unexpected end of file".into()))?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Corrupt("unexpected end of file".into()))?;
        Ok(f64::from_le_bytes(b))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::Corrupt("trailing bytes".into())),
        }
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn header(out: &mut Vec<u8>, magic: &[u8; 4], dim: usize, size: usize, origin: &[f64], edge: f64) {
    out.extend_from_slice(magic);
    put_u32(out, FORMAT_VERSION);
    put_u32(out, dim as u32);
    put_u32(out, size as u32);
    origin.iter().for_each(|&o| put_f64(out, o));
    (0..dim).for_each(|_| put_f64(out, edge));
}

pub fn encode_field(field: &NodalField) -> Vec<u8> {
    let spec = field.spec();
    let mut out = Vec::with_capacity(40 + 8 * spec.len());
    header(&mut out, FIELD_MAGIC, spec.dim(), spec.n(), spec.origin(), spec.edge_length());
    field.values().iter().for_each(|&v| put_f64(&mut out, v));
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<NodalField> {
    let mut r = Reader::new(bytes);
    r.magic(FIELD_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let n = r.u32()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Corrupt(format!("dimension {dim}")));
    }
    let origin = r.f64s(dim)?;
    let edges = r.f64s(dim)?;
    if edges.iter().any(|&e| e != edges[0]) {
        return Err(Error::Corrupt("non-cubic grid".into()));
    }
    let spec = GridSpec::new(dim, n, origin, edges[0])?;
    let values = r.f64s(spec.len())?;
    r.finish()?;
    NodalField::new(spec, values)
}

pub fn encode_kernel(kernel: &StencilKernel) -> Vec<u8> {
    let d = kernel.dim();
    let w = kernel.width();
    let mut out = Vec::with_capacity(40 + 8 * kernel.weights().len());
    let origin = vec![-(kernel.radius() as f64); d];
    header(&mut out, KERNEL_MAGIC, d, w, &origin, w as f64);
    kernel.weights().iter().for_each(|&v| put_f64(&mut out, v));
    out
}

pub fn decode_kernel(bytes: &[u8]) -> Result<StencilKernel> {
    let mut r = Reader::new(bytes);
    r.magic(KERNEL_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let width = r.u32()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Corrupt(format!("dimension {dim}")));
    }
    r.f64s(2 * dim)?;
    let weights = r.f64s(width.pow(dim as u32))?;
    r.finish()?;
    StencilKernel::new(dim, width, weights)
}

pub fn write_field(field: &NodalField, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_field(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<NodalField> {
    decode_field(&std::fs::read(path)?)
}

pub fn write_kernel(kernel: &StencilKernel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_kernel(kernel))?;
    Ok(())
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<StencilKernel> {
    decode_kernel(&std::fs::read(path)?)
}
