//! `WNET` checkpoints, little-endian.
//!
//! Layout: magic, `u32` version, `u32` d, `u32` n_K, `f64` tau_tilde, `f64`
//! eps, `u32` trained n, `d` origin values and one edge length as `f64`,
//! `u32` layer count and one `u32` per layer size, then the kernel weights and
//! `W^1, b^1, W^2, b^2, ...` as `f64`.

use std::path::Path;

use super::{MlpParams, NeuralMcfOperator};
use crate::error::{Error, Result};
use crate::grid::io::{FORMAT_VERSION, Reader, put_f64, put_u32};
use crate::grid::{GridSpec, StencilKernel};

pub const NETWORK_MAGIC: &[u8; 4] = b"WNET";

pub fn encode_checkpoint(op: &NeuralMcfOperator) -> Vec<u8> {
    let mut out = Vec::new();
    let grid = op.trained_grid();
    out.extend_from_slice(NETWORK_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, op.dim() as u32);
    put_u32(&mut out, op.kernel().width() as u32);
    put_f64(&mut out, op.tau_tilde());
    put_f64(&mut out, op.epsilon());
    put_u32(&mut out, grid.n() as u32);
    grid.origin().iter().for_each(|&o| put_f64(&mut out, o));
    put_f64(&mut out, grid.edge_length());
    let sizes = op.mlp().layer_sizes();
    put_u32(&mut out, sizes.len() as u32);
    sizes.iter().for_each(|&s| put_u32(&mut out, s as u32));
    op.kernel().weights().iter().for_each(|&w| put_f64(&mut out, w));
    op.mlp().theta().iter().for_each(|&w| put_f64(&mut out, w));
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NeuralMcfOperator> {
    let mut r = Reader::new(bytes);
    r.magic(NETWORK_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Corrupt(format!("dimension {dim}")));
    }
    let width = r.u32()? as usize;
    let tau_tilde = r.f64()?;
    let eps = r.f64()?;
    let n = r.u32()? as usize;
    let origin = r.f64s(dim)?;
    let edge = r.f64()?;
    let layers = r.u32()? as usize;
    if layers == 0 || layers > 64 {
        return Err(Error::Corrupt(format!("{layers} layers")));
    }
    let sizes = (0..layers).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    if width > 4096 || sizes.iter().any(|&s| s > 1 << 16) {
        return Err(Error::Corrupt("implausible sizes".into()));
    }
    let kernel = StencilKernel::new(dim, width, r.f64s(width.pow(dim as u32))?)?;
    let n_theta = MlpParams::zeros(&sizes)?.theta().len();
    let mlp = MlpParams::from_flat(&sizes, r.f64s(n_theta)?)?;
    r.finish()?;
    let grid = GridSpec::new(dim, n, origin, edge)?;
    NeuralMcfOperator::new(kernel, mlp, tau_tilde, eps, grid)
}

pub fn save_checkpoint(op: &NeuralMcfOperator, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(op))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NeuralMcfOperator> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint and checks that it was trained in dimension `dim`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, dim: usize) -> Result<NeuralMcfOperator> {
    let op = load_checkpoint(path)?;
    if op.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: op.dim(),
        });
    }
    Ok(op)
}
