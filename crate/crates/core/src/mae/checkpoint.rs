//! MDCK checkpoint container.
//!
//! Layout (little-endian): magic `MDCK`; config block (ten u64 sizes, f64
//! mask ratio, f64 alpha, u8 full-scale flag, f64 label mean, f64 label
//! std); u64 entry count; per entry u64 name length, name bytes, u8 ndim,
//! u64 dims, f64 payload; optimizer block: u8 present flag, then u64 step,
//! f64 beta1, beta2, eps, weight decay, and for each entry in order its first
//! and second moment payloads.

use std::path::Path;

use super::{AdamWConfig, MaeError, ModelConfig, ModelParams, OptimState};
use crate::io::{ByteReader, ByteWriter, FormatError};
use crate::tensor::DenseTensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optim: Option<OptimState>,
}

fn write_config(w: &mut ByteWriter, c: &ModelConfig) {
    for v in [
        c.img_size[0],
        c.img_size[1],
        c.patch,
        c.enc_blocks,
        c.enc_heads,
        c.enc_dim,
        c.mlp_ratio,
        c.dec_dim,
        c.dec_blocks,
        c.dec_heads,
    ] {
        w.u64(v as u64);
    }
    w.f64(c.mask_ratio).f64(c.alpha).u8(c.full_scale as u8).f64(c.label_mean).f64(c.label_std);
}

fn read_config(r: &mut ByteReader<'_>) -> Result<ModelConfig, FormatError> {
    let mut s = [0usize; 10];
    for v in s.iter_mut() {
        *v = r.usize()?;
    }
    Ok(ModelConfig {
        img_size: [s[0], s[1]],
        patch: s[2],
        enc_blocks: s[3],
        enc_heads: s[4],
        enc_dim: s[5],
        mlp_ratio: s[6],
        dec_dim: s[7],
        dec_blocks: s[8],
        dec_heads: s[9],
        mask_ratio: r.f64()?,
        alpha: r.f64()?,
        full_scale: r.u8()? != 0,
        label_mean: r.f64()?,
        label_std: r.f64()?,
    })
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    write_config(&mut w, &ck.config);
    w.u64(ck.params.len() as u64);
    for e in ck.params.entries() {
        w.u64(e.name.len() as u64).bytes(e.name.as_bytes());
        w.u8(e.tensor.ndim() as u8);
        for &d in e.tensor.dims() {
            w.u64(d as u64);
        }
        for &v in e.tensor.data() {
            w.f64(v);
        }
    }
    match &ck.optim {
        None => {
            w.u8(0);
        }
        Some(o) => {
            w.u8(1).u64(o.step);
            w.f64(o.config.beta1).f64(o.config.beta2).f64(o.config.eps).f64(o.config.weight_decay);
            for (m, v) in o.m.iter().zip(&o.v) {
                for &x in m.iter().chain(v) {
                    w.f64(x);
                }
            }
        }
    }
    w.into_inner()
}

fn f64s(r: &mut ByteReader<'_>, n: usize) -> Result<Vec<f64>, FormatError> {
    let bytes = r.take(n.checked_mul(8).ok_or(FormatError::DimOverflow(vec![n as u64]))?)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, MaeError> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let config = read_config(&mut r)?;
    config.validate()?;
    let n = r.usize()?;
    let mut named = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let len = r.usize()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| FormatError::Invalid("entry name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.usize()?);
        }
        let count = crate::tensor::element_count(&dims).map_err(FormatError::from)?;
        let data = f64s(&mut r, count)?;
        named.push((name, DenseTensor::new(dims, data).map_err(FormatError::from)?));
    }
    let params = ModelParams::from_named(&config, named)?;
    let optim = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let oc = AdamWConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()?, weight_decay: r.f64()? };
            let mut m = Vec::with_capacity(params.len());
            let mut v = Vec::with_capacity(params.len());
            for e in params.entries() {
                m.push(f64s(&mut r, e.tensor.len())?);
                v.push(f64s(&mut r, e.tensor.len())?);
            }
            Some(OptimState { step, config: oc, m, v })
        }
        f => return Err(FormatError::Invalid(format!("bad optimizer flag {f}")).into()),
    };
    r.finish()?;
    Ok(Checkpoint { config, params, optim })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<(), MaeError> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, MaeError> {
    decode_checkpoint(&std::fs::read(path)?)
}
