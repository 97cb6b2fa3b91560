//! Masked-autoencoder vision transformer with a shared encoder, an SSAT
//! reconstruction branch and a regression branch trained with the convex
//! joint loss `L = α·l_reg + (1−α)·l_ssat`.

pub mod autograd;
mod checkpoint;
mod model;
mod optim;
mod params;
mod train;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::FormatError;
use crate::tensor::{DenseTensor, ShapeError};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use model::{
    backward, forward, forward_with_target, masked_mse, predict_image, BatchItem, ForwardMode, ForwardOutput, Gradients,
};
pub use optim::{adamw_step, lr_at, AdamWConfig, OptimState, ScheduleConfig};
pub use params::{canonical_layout, ModelParams, ParamEntry};
pub use train::{train, StepRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum MaeError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("image {got:?} does not match the configured size {expected:?}")]
    ImageSize { got: Vec<usize>, expected: [usize; 2] },
    #[error("image dims {dims:?} not divisible by patch size {patch}")]
    Indivisible { dims: Vec<usize>, patch: usize },
    #[error("parameter {0:?} contains non-finite values")]
    NonFiniteParam(String),
    #[error("non-finite activation at node {node} ({op}); first parameter touching it: {param}")]
    NonFiniteActivation { node: usize, op: &'static str, param: String },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("shape mismatch for {name}: {got:?} vs {expected:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, expected: Vec<usize> },
    #[error("schedule step {i} beyond N_iter = {n_iter}")]
    ScheduleRange { i: usize, n_iter: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("loss diverged at step {step}")]
    Diverged { step: usize, last_good: Box<Checkpoint> },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Network hyper-parameters. `label_mean`/`label_std` map standardized
/// outputs back to months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub img_size: [usize; 2],
    pub patch: usize,
    pub enc_blocks: usize,
    pub enc_heads: usize,
    pub enc_dim: usize,
    pub mlp_ratio: usize,
    pub dec_dim: usize,
    pub dec_blocks: usize,
    pub dec_heads: usize,
    pub mask_ratio: f64,
    pub alpha: f64,
    #[serde(default)]
    pub full_scale: bool,
    #[serde(default)]
    pub label_mean: f64,
    #[serde(default = "one")]
    pub label_std: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale shrink of the ViT-T setup.
    pub fn desk() -> Self {
        Self {
            img_size: [32, 32],
            patch: 8,
            enc_blocks: 4,
            enc_heads: 4,
            enc_dim: 64,
            mlp_ratio: 4,
            dec_dim: 32,
            dec_blocks: 2,
            dec_heads: 4,
            mask_ratio: 0.75,
            alpha: 0.1,
            full_scale: false,
            label_mean: 0.0,
            label_std: 1.0,
        }
    }

    /// Published configuration (224×224 input, 16×16 patches, ViT-T encoder).
    pub fn full_scale() -> Self {
        Self {
            img_size: [224, 224],
            patch: 16,
            enc_blocks: 12,
            enc_heads: 3,
            enc_dim: 192,
            mlp_ratio: 4,
            dec_dim: 128,
            dec_blocks: 2,
            dec_heads: 16,
            full_scale: true,
            ..Self::desk()
        }
    }

    /// Gradient-check configuration: 8×8 image, p=4, one block, width 8.
    pub fn tiny() -> Self {
        Self {
            img_size: [8, 8],
            patch: 4,
            enc_blocks: 1,
            enc_heads: 2,
            enc_dim: 8,
            mlp_ratio: 2,
            dec_dim: 8,
            dec_blocks: 1,
            dec_heads: 2,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), MaeError> {
        let bad = |m: &str| Err(MaeError::BadConfig(m.to_string()));
        let [h, w] = self.img_size;
        if self.patch == 0 || h == 0 || w == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return Err(MaeError::Indivisible { dims: vec![h, w], patch: self.patch });
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.enc_heads == 0 || self.enc_dim == 0 || !self.enc_dim.is_multiple_of(self.enc_heads) {
            return bad("enc_dim must be a positive multiple of enc_heads");
        }
        if self.dec_heads == 0 || self.dec_dim == 0 || !self.dec_dim.is_multiple_of(self.dec_heads) {
            return bad("dec_dim must be a positive multiple of dec_heads");
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive");
        }
        if !(self.label_std > 0.0 && self.label_std.is_finite() && self.label_mean.is_finite()) {
            return bad("label_std must be positive and finite");
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        (self.img_size[0] / self.patch) * (self.img_size[1] / self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }
}

/// Splits `[H, W]` into row-major `p×p` patches, one per row of the output.
pub fn patchify(img: &DenseTensor<f64>, p: usize) -> Result<DenseTensor<f64>, MaeError> {
    let dims = img.dims();
    if dims.len() != 2 || p == 0 || !dims[0].is_multiple_of(p) || !dims[1].is_multiple_of(p) {
        return Err(MaeError::Indivisible { dims: dims.to_vec(), patch: p });
    }
    let (h, w) = (dims[0], dims[1]);
    let gw = w / p;
    let n = (h / p) * gw;
    let d = img.data();
    let mut out = Vec::with_capacity(n * p * p);
    for t in 0..n {
        let (r0, c0) = ((t / gw) * p, (t % gw) * p);
        for i in 0..p {
            out.extend_from_slice(&d[(r0 + i) * w + c0..(r0 + i) * w + c0 + p]);
        }
    }
    Ok(DenseTensor::matrix(n, p * p, out)?)
}

/// Inverse of [`patchify`] for an `[h, w]` image.
pub fn unpatchify(patches: &DenseTensor<f64>, p: usize, h: usize, w: usize) -> Result<DenseTensor<f64>, MaeError> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(MaeError::Indivisible { dims: vec![h, w], patch: p });
    }
    let gw = w / p;
    let n = (h / p) * gw;
    if patches.dims() != [n, p * p] {
        return Err(MaeError::ShapeMismatch {
            name: "patches".into(),
            got: patches.dims().to_vec(),
            expected: vec![n, p * p],
        });
    }
    let d = patches.data();
    let mut out = vec![0.0; h * w];
    for t in 0..n {
        let (r0, c0) = ((t / gw) * p, (t % gw) * p);
        for i in 0..p {
            out[(r0 + i) * w + c0..(r0 + i) * w + c0 + p]
                .copy_from_slice(&d[t * p * p + i * p..t * p * p + (i + 1) * p]);
        }
    }
    Ok(DenseTensor::matrix(h, w, out)?)
}

/// Token partition for one forward pass; both lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub kept: Vec<usize>,
    pub masked: Vec<usize>,
}

impl Mask {
    /// Every token kept (used by regression-only inference).
    pub fn none(n_tok: usize) -> Self {
        Self { kept: (0..n_tok).collect(), masked: Vec::new() }
    }
}

/// Uniform choice of `round(ρ·n_tok)` masked tokens without replacement.
pub fn random_mask<R: Rng + ?Sized>(n_tok: usize, ratio: f64, rng: &mut R) -> Mask {
    let n_mask = ((ratio * n_tok as f64).round() as usize).min(n_tok);
    let mut idx: Vec<usize> = (0..n_tok).collect();
    idx.shuffle(rng);
    let mut masked = idx[..n_mask].to_vec();
    let mut kept = idx[n_mask..].to_vec();
    masked.sort_unstable();
    kept.sort_unstable();
    Mask { kept, masked }
}

/// Components of the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_reg: f64,
    pub l_ssat: f64,
    pub masked_patch_count: usize,
}

impl LossBreakdown {
    /// Builds the breakdown with `total = α·l_reg + (1−α)·l_ssat`.
    pub fn new(alpha: f64, l_reg: f64, l_ssat: f64, masked_patch_count: usize) -> Self {
        Self { total: joint_loss(alpha, l_reg, l_ssat), l_reg, l_ssat, masked_patch_count }
    }
}

/// `alpha * l_reg + (1 - alpha) * l_ssat`; the single place the convex combination is evaluated.
pub fn joint_loss(alpha: f64, l_reg: f64, l_ssat: f64) -> f64 {
    alpha * l_reg + (1.0 - alpha) * l_ssat
}


#[cfg(test)]
#[path = "tests.rs"]
mod model_tests;
