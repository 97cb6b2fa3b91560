//! Dense real/complex containers and the video-sequence domain types.

use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("dimension list is empty")]
    NoDims,
    #[error("dimension {axis} has size 0")]
    ZeroDim { axis: usize },
    #[error("data length {got} does not match product of dims {dims:?} = {expected}")]
    LengthMismatch { dims: Vec<usize>, expected: usize, got: usize },
    #[error("product of dims {0:?} overflows usize")]
    Overflow(Vec<usize>),
    #[error("expected a {expected}-d tensor, got dims {got:?}")]
    Rank { expected: usize, got: Vec<usize> },
    #[error("incompatible shapes {0:?} and {1:?}")]
    Incompatible(Vec<usize>, Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

/// Checked product of a dimension list; every axis must be non-zero.
pub fn element_count(dims: &[usize]) -> Result<usize, ShapeError> {
    if dims.is_empty() {
        return Err(ShapeError::NoDims);
    }
    let mut n: usize = 1;
    for (axis, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(ShapeError::ZeroDim { axis });
        }
        n = n.checked_mul(d).ok_or_else(|| ShapeError::Overflow(dims.to_vec()))?;
    }
    Ok(n)
}

/// Row-major dense real tensor.
#[derive(Clone, PartialEq)]
pub struct DenseTensor<T: Scalar> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for DenseTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor").field("dims", &self.dims).field("len", &self.data.len()).finish()
    }
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self, ShapeError> {
        let expected = element_count(&dims)?;
        if data.len() != expected {
            return Err(ShapeError::LengthMismatch { dims, expected, got: data.len() });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, ShapeError> {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Result<Self, ShapeError> {
        let n = element_count(&dims)?;
        Ok(Self { dims, data: vec![value; n] })
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(dims: Vec<usize>, f: impl FnMut(usize) -> T) -> Result<Self, ShapeError> {
        let n = element_count(&dims)?;
        Ok(Self { dims, data: (0..n).map(f).collect() })
    }

    /// 2-d convenience constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ShapeError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Result<Self, ShapeError> {
        Self::from_fn(vec![n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable view of the element buffer; the shape is fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.flat_index(idx)]
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self, ShapeError> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, ShapeError> {
        if self.dims != other.dims {
            return Err(ShapeError::Incompatible(self.dims.clone(), other.dims.clone()));
        }
        Ok(Self { dims: self.dims.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect() })
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor { dims: self.dims.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    fn expect_matrix(&self) -> (usize, usize) {
        assert_eq!(self.dims.len(), 2, "expected a matrix, got dims {:?}", self.dims);
        (self.dims[0], self.dims[1])
    }

    pub fn nrows(&self) -> usize {
        self.expect_matrix().0
    }

    pub fn ncols(&self) -> usize {
        self.expect_matrix().1
    }

    /// Matrix element (2-d only).
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.dims[1] + j]
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = self.expect_matrix();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self { dims: vec![n, m], data: out }
    }

    /// Copy of column `j` of a matrix.
    pub fn column(&self, j: usize) -> Vec<T> {
        let (m, n) = self.expect_matrix();
        (0..m).map(|i| self.data[i * n + j]).collect()
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, ShapeError> {
        let (m, k) = self.expect_matrix();
        let (k2, n) = rhs.expect_matrix();
        if k != k2 {
            return Err(ShapeError::Incompatible(self.dims.clone(), rhs.dims.clone()));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self::matrix(m, n, out)
    }
}

/// Complex tensor stored as separate real and imaginary planes.
#[derive(Clone, PartialEq)]
pub struct ComplexDenseTensor<T: Scalar> {
    dims: Vec<usize>,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Scalar> fmt::Debug for ComplexDenseTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComplexDenseTensor").field("dims", &self.dims).finish()
    }
}

impl<T: Scalar> ComplexDenseTensor<T> {
    pub fn new(dims: Vec<usize>, re: Vec<T>, im: Vec<T>) -> Result<Self, ShapeError> {
        let expected = element_count(&dims)?;
        for got in [re.len(), im.len()] {
            if got != expected {
                return Err(ShapeError::LengthMismatch { dims, expected, got });
            }
        }
        Ok(Self { dims, re, im })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, ShapeError> {
        let n = element_count(&dims)?;
        Ok(Self { dims, re: vec![T::zero(); n], im: vec![T::zero(); n] })
    }

    pub fn from_complex(dims: Vec<usize>, values: &[Complex<T>]) -> Result<Self, ShapeError> {
        Self::new(dims, values.iter().map(|c| c.re).collect(), values.iter().map(|c| c.im).collect())
    }

    pub fn from_real(t: &DenseTensor<T>) -> Self {
        Self { dims: t.dims().to_vec(), re: t.data().to_vec(), im: vec![T::zero(); t.len()] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    #[inline]
    pub fn value(&self, flat: usize) -> Complex<T> {
        Complex::new(self.re[flat], self.im[flat])
    }

    pub fn to_complex_vec(&self) -> Vec<Complex<T>> {
        self.re.iter().zip(&self.im).map(|(&r, &i)| Complex::new(r, i)).collect()
    }

    pub fn real_part(&self) -> DenseTensor<T> {
        DenseTensor { dims: self.dims.clone(), data: self.re.clone() }
    }

    pub fn imag_part(&self) -> DenseTensor<T> {
        DenseTensor { dims: self.dims.clone(), data: self.im.clone() }
    }

    pub fn abs(&self) -> DenseTensor<T> {
        DenseTensor { dims: self.dims.clone(), data: self.re.iter().zip(&self.im).map(|(&r, &i)| r.hypot(i)).collect() }
    }

    pub fn frobenius_norm(&self) -> T {
        self.re.iter().chain(&self.im).map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self, ShapeError> {
        Self::new(dims, self.re, self.im)
    }
}

/// Clinical state attached to a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeartState {
    Ctl,
    Ob,
    Sh,
    Other(String),
}

impl HeartState {
    pub fn parse(s: &str) -> Self {
        match s.trim() {
            "CTL" => HeartState::Ctl,
            "OB" => HeartState::Ob,
            "SH" => HeartState::Sh,
            other => HeartState::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            HeartState::Ctl => "CTL",
            HeartState::Ob => "OB",
            HeartState::Sh => "SH",
            HeartState::Other(s) => s,
        }
    }
}

impl fmt::Display for HeartState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitHint {
    Train,
    Val,
    Test,
}

impl SplitHint {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(SplitHint::Train),
            "val" | "validation" => Some(SplitHint::Val),
            "test" => Some(SplitHint::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitHint::Train => "train",
            SplitHint::Val => "val",
            SplitHint::Test => "test",
        }
    }
}

/// Pixel rectangle. `x`/`width` run along the first frame axis, `y`/`height`
/// along the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn fits(&self, nx: usize, ny: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= nx && self.y + self.height <= ny
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceAnnotation {
    pub sequence_id: String,
    pub heart_state: HeartState,
    pub failure_age_months: f64,
    pub roi: Option<Roi>,
    pub split_hint: Option<SplitHint>,
}

impl SequenceAnnotation {
    pub fn new(id: impl Into<String>, heart_state: HeartState, failure_age_months: f64) -> Self {
        Self { sequence_id: id.into(), heart_state, failure_age_months, roi: None, split_hint: None }
    }
}

/// Homogenized snapshot tensor `[N_x, N_y, K]` sampled every `dt_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: DenseTensor<f64>,
    dt_seconds: f64,
    pub annotation: SequenceAnnotation,
}

impl VideoSequence {
    pub fn new(frames: DenseTensor<f64>, dt_seconds: f64, annotation: SequenceAnnotation) -> Result<Self, ShapeError> {
        if frames.ndim() != 3 {
            return Err(ShapeError::Rank { expected: 3, got: frames.dims().to_vec() });
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(ShapeError::Invalid(format!("dt must be positive, got {dt_seconds}")));
        }
        if let Some(roi) = &annotation.roi {
            if !roi.fits(frames.dims()[0], frames.dims()[1]) {
                return Err(ShapeError::Invalid(format!(
                    "roi {roi:?} outside {}x{} frame",
                    frames.dims()[0],
                    frames.dims()[1]
                )));
            }
        }
        Ok(Self { frames, dt_seconds, annotation })
    }

    /// Stacks `[N_x, N_y]` frames along a trailing time axis.
    pub fn from_frames(
        frames: &[DenseTensor<f64>],
        dt_seconds: f64,
        annotation: SequenceAnnotation,
    ) -> Result<Self, ShapeError> {
        let first = frames.first().ok_or_else(|| ShapeError::Invalid("no frames".into()))?;
        if first.ndim() != 2 {
            return Err(ShapeError::Rank { expected: 2, got: first.dims().to_vec() });
        }
        let (nx, ny, k) = (first.dims()[0], first.dims()[1], frames.len());
        let mut data = vec![0.0; nx * ny * k];
        for (t, frame) in frames.iter().enumerate() {
            if frame.dims() != first.dims() {
                return Err(ShapeError::Incompatible(first.dims().to_vec(), frame.dims().to_vec()));
            }
            for (p, &v) in frame.data().iter().enumerate() {
                data[p * k + t] = v;
            }
        }
        Self::new(DenseTensor::new(vec![nx, ny, k], data)?, dt_seconds, annotation)
    }

    pub fn frames(&self) -> &DenseTensor<f64> {
        &self.frames
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_seconds
    }

    pub fn nx(&self) -> usize {
        self.frames.dims()[0]
    }

    pub fn ny(&self) -> usize {
        self.frames.dims()[1]
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dims()[2]
    }

    pub fn id(&self) -> &str {
        &self.annotation.sequence_id
    }

    /// Copy of frame `k` as an `[N_x, N_y]` image.
    pub fn frame(&self, k: usize) -> DenseTensor<f64> {
        let kk = self.num_frames();
        let data = self.frames.data().iter().skip(k).step_by(kk).copied().collect();
        DenseTensor::new(vec![self.nx(), self.ny()], data).expect("frame dims")
    }

    /// Same frames under a different time step or annotation.
    pub fn with_frames(&self, frames: DenseTensor<f64>) -> Result<Self, ShapeError> {
        Self::new(frames, self.dt_seconds, self.annotation.clone())
    }
}

/// Snapshot matrix `[N_p, K]`: column `k` is frame `k` flattened row-major.
pub fn reshape_to_snapshot_matrix(seq: &VideoSequence) -> DenseTensor<f64> {
    // [N_x, N_y, K] row-major already has pixel-major, time-minor layout.
    let (nx, ny, k) = (seq.nx(), seq.ny(), seq.num_frames());
    DenseTensor::new(vec![nx * ny, k], seq.frames().data().to_vec()).expect("snapshot dims")
}

/// Inverse of [`reshape_to_snapshot_matrix`].
pub fn snapshot_matrix_to_frames(m: &DenseTensor<f64>, nx: usize, ny: usize) -> Result<DenseTensor<f64>, ShapeError> {
    if m.ndim() != 2 || m.nrows() != nx * ny {
        return Err(ShapeError::Incompatible(m.dims().to_vec(), vec![nx * ny]));
    }
    DenseTensor::new(vec![nx, ny, m.ncols()], m.data().to_vec())
}
