//! Modal decomposition and masked-autoencoder regression for echocardiography
//! sequences.
//!
//! The numeric core ([`tensor`], [`linalg`], [`modal`]) is generic over the
//! [`Scalar`] type; the aliases below fix it to `f64`, which is what the
//! decomposition pipeline and the network use.

// `!(x > y)` is used deliberately so NaN fails the check; numeric kernels
// index several arrays in lockstep
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod eval;
pub mod fixtures;
pub mod hodmd;
pub mod io;
pub mod linalg;
pub mod mae;
pub mod modal;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use scalar::{Dtype, Scalar};
pub use tensor::{
    reshape_to_snapshot_matrix, snapshot_matrix_to_frames, HeartState, Roi, SequenceAnnotation, ShapeError, SplitHint,
    VideoSequence,
};

pub type Tensor = tensor::DenseTensor<f64>;
pub type Tensor32 = tensor::DenseTensor<f32>;
pub type ComplexTensor = tensor::ComplexDenseTensor<f64>;
pub type SvdFactors = linalg::Svd<f64>;
pub type EigPairs = linalg::Eig<f64>;
pub type HosvdFactors = modal::Hosvd<f64>;
