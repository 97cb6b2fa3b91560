//! Stage-level SVD of snapshot sequences and higher-order SVD of video tensors.

use crate::linalg::{svd, truncate, LinalgError, Svd, TruncationRule};
use crate::scalar::Scalar;
use crate::tensor::{reshape_to_snapshot_matrix, ComplexDenseTensor, DenseTensor, ShapeError, VideoSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModalError {
    #[error("need at least 2 snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error("need at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("tolerance must be > 0, got {0}")]
    BadTolerance(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Retained spatial modes and the low-rank reconstruction of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdStageOutput {
    /// Unit-Frobenius-norm `[N_x, N_y]` images, one per retained component.
    pub modes: Vec<DenseTensor<f64>>,
    /// `[N_x, N_y, K]`
    pub reconstructions: DenseTensor<f64>,
    pub sigma_retained: Vec<f64>,
    /// Frobenius norm of the discarded part of the snapshot matrix.
    pub residual_norm: f64,
}

impl SvdStageOutput {
    pub fn rank(&self) -> usize {
        self.sigma_retained.len()
    }
}

fn stage_from_matrix(
    snapshots: &DenseTensor<f64>,
    nx: usize,
    ny: usize,
    rule: TruncationRule,
) -> Result<SvdStageOutput, ModalError> {
    let full = svd(snapshots)?;
    let keep = truncate(&full, rule)?;
    let r = keep.rank();
    let modes = (0..r).map(|k| DenseTensor::new(vec![nx, ny], keep.u.column(k))).collect::<Result<Vec<_>, _>>()?;
    let recon = keep.reconstruct();
    Ok(SvdStageOutput {
        modes,
        reconstructions: DenseTensor::new(vec![nx, ny, snapshots.ncols()], recon.into_data())?,
        sigma_retained: keep.sigma.clone(),
        residual_norm: full.tail_norm(r),
    })
}

/// Truncated SVD of the snapshot matrix of `seq`.
pub fn svd_stage(seq: &VideoSequence, rule: TruncationRule) -> Result<SvdStageOutput, ModalError> {
    let k = seq.num_frames();
    if k < 2 {
        return Err(ModalError::TooFewSnapshots(k));
    }
    stage_from_matrix(&reshape_to_snapshot_matrix(seq), seq.nx(), seq.ny(), rule)
}

/// Treats a stack of equally sized images as a pseudo-sequence.
pub fn svd_of_images(images: &[DenseTensor<f64>], rule: TruncationRule) -> Result<SvdStageOutput, ModalError> {
    if images.len() < 2 {
        return Err(ModalError::TooFewImages(images.len()));
    }
    let first = images[0].dims();
    if first.len() != 2 {
        return Err(ShapeError::Rank { expected: 2, got: first.to_vec() }.into());
    }
    let (nx, ny, k) = (first[0], first[1], images.len());
    let mut data = vec![0.0; nx * ny * k];
    for (t, img) in images.iter().enumerate() {
        if img.dims() != first {
            return Err(ShapeError::Incompatible(first.to_vec(), img.dims().to_vec()).into());
        }
        for (p, &v) in img.data().iter().enumerate() {
            data[p * k + t] = v;
        }
    }
    stage_from_matrix(&DenseTensor::matrix(nx * ny, k, data)?, nx, ny, rule)
}

/// Splits every complex mode into its `abs`, `real` and `imag` planes (in that
/// order) and runs [`svd_of_images`] on the resulting stack.
pub fn svd_of_modes(modes: &[ComplexDenseTensor<f64>], rule: TruncationRule) -> Result<SvdStageOutput, ModalError> {
    let images: Vec<_> = modes.iter().flat_map(|m| [m.abs(), m.real_part(), m.imag_part()]).collect();
    svd_of_images(&images, rule)
}

/// Tucker factors from a truncated higher-order SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct Hosvd<T: Scalar> {
    /// `[r_1, ..., r_N]`
    pub core: DenseTensor<T>,
    /// `factors[n]` is `[I_n, r_n]` with orthonormal columns.
    pub factors: Vec<DenseTensor<T>>,
    /// Full singular spectrum of every mode-n unfolding.
    pub mode_sigma: Vec<Vec<T>>,
    pub retained_ranks: Vec<usize>,
}

impl<T: Scalar> Hosvd<T> {
    pub fn original_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }
}

/// Mode-`n` unfolding: `[I_n, prod(other dims)]`, remaining axes in order.
pub fn unfold<T: Scalar>(t: &DenseTensor<T>, n: usize) -> DenseTensor<T> {
    let dims = t.dims();
    let before: usize = dims[..n].iter().product();
    let after: usize = dims[n + 1..].iter().product();
    let i_n = dims[n];
    let cols = before * after;
    let mut out = vec![T::zero(); i_n * cols];
    for a in 0..before {
        for i in 0..i_n {
            let src = &t.data()[(a * i_n + i) * after..(a * i_n + i + 1) * after];
            out[i * cols + a * after..i * cols + (a + 1) * after].copy_from_slice(src);
        }
    }
    DenseTensor::matrix(i_n, cols, out).expect("unfold dims")
}

/// `t x_n m`: contracts axis `n` (size `I_n`) with `m` of shape `[J, I_n]`.
pub fn mode_product<T: Scalar>(t: &DenseTensor<T>, n: usize, m: &DenseTensor<T>) -> Result<DenseTensor<T>, ShapeError> {
    let dims = t.dims();
    if m.ndim() != 2 || m.ncols() != dims[n] {
        return Err(ShapeError::Incompatible(dims.to_vec(), m.dims().to_vec()));
    }
    let before: usize = dims[..n].iter().product();
    let after: usize = dims[n + 1..].iter().product();
    let (j_n, i_n) = (m.nrows(), dims[n]);
    let mut out = vec![T::zero(); before * j_n * after];
    for a in 0..before {
        for j in 0..j_n {
            let dst = (a * j_n + j) * after;
            for i in 0..i_n {
                let w = m.at(j, i);
                if w == T::zero() {
                    continue;
                }
                let src = (a * i_n + i) * after;
                for b in 0..after {
                    out[dst + b] += w * t.data()[src + b];
                }
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims[n] = j_n;
    DenseTensor::new(new_dims, out)
}

/// Higher-order SVD keeping, along every axis, the components whose singular
/// value ratio to the largest exceeds `eps`.
pub fn hosvd<T: Scalar>(t: &DenseTensor<T>, eps: f64) -> Result<Hosvd<T>, ModalError> {
    if !(eps > 0.0) {
        return Err(ModalError::BadTolerance(eps));
    }
    let mut factors = Vec::with_capacity(t.ndim());
    let mut mode_sigma = Vec::with_capacity(t.ndim());
    let mut ranks = Vec::with_capacity(t.ndim());
    for n in 0..t.ndim() {
        let s: Svd<T> = svd(&unfold(t, n))?;
        let keep = truncate(&s, TruncationRule::Tolerance(eps))?;
        ranks.push(keep.rank());
        mode_sigma.push(s.sigma);
        factors.push(keep.u);
    }
    let mut core = t.clone();
    for (n, f) in factors.iter().enumerate() {
        core = mode_product(&core, n, &f.transpose())?;
    }
    Ok(Hosvd { core, factors, mode_sigma, retained_ranks: ranks })
}

/// Contracts the core with every factor, restoring the original dimensions.
pub fn hosvd_reconstruct<T: Scalar>(f: &Hosvd<T>) -> DenseTensor<T> {
    let mut out = f.core.clone();
    for (n, u) in f.factors.iter().enumerate() {
        out = mode_product(&out, n, u).expect("factor dims");
    }
    out
}
