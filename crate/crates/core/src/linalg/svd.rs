//! One-sided Jacobi SVD. Tall inputs are first reduced to their triangular
//! QR factor so the rotations run on an `n x n` matrix.

use super::LinalgError;
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

const MAX_SWEEPS: usize = 80;

/// Economy SVD `A = U diag(sigma) V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd<T: Scalar> {
    /// `[m, r]`, orthonormal columns.
    pub u: DenseTensor<T>,
    /// Non-increasing, non-negative.
    pub sigma: Vec<T>,
    /// `[n, r]`, orthonormal columns.
    pub v: DenseTensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationRule {
    /// Keep at most this many components.
    Rank(usize),
    /// Keep components with `sigma_k / sigma_0 > eps`.
    Tolerance(f64),
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let (m, r) = (self.u.nrows(), self.rank());
        let n = self.v.nrows();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for k in 0..r {
                let a = self.u.at(i, k) * self.sigma[k];
                if a == T::zero() {
                    continue;
                }
                for (j, o) in row.iter_mut().enumerate() {
                    *o += a * self.v.at(j, k);
                }
            }
        }
        DenseTensor::matrix(m, n, out).expect("svd dims")
    }

    /// `sqrt(sum of squared singular values from index r on)`.
    pub fn tail_norm(&self, r: usize) -> T {
        self.sigma[r.min(self.rank())..].iter().map(|&s| s * s).sum::<T>().sqrt()
    }

    /// Number of components a rule retains (always at least one).
    pub fn retained_count(&self, rule: TruncationRule) -> Result<usize, LinalgError> {
        match rule {
            TruncationRule::Rank(0) => Err(LinalgError::InvalidRule("rank must be >= 1".into())),
            TruncationRule::Rank(r) => Ok(r.min(self.rank())),
            TruncationRule::Tolerance(eps) if !(eps > 0.0) => {
                Err(LinalgError::InvalidRule(format!("tolerance must be > 0, got {eps}")))
            }
            TruncationRule::Tolerance(eps) => {
                let s0 = self.sigma[0];
                if s0 == T::zero() {
                    return Ok(1);
                }
                let eps = T::of(eps);
                Ok(self.sigma.iter().filter(|&&s| s / s0 > eps).count().max(1))
            }
        }
    }
}

/// Keeps the leading components selected by `rule`.
pub fn truncate<T: Scalar>(f: &Svd<T>, rule: TruncationRule) -> Result<Svd<T>, LinalgError> {
    let keep = f.retained_count(rule)?;
    Ok(Svd { u: leading_columns(&f.u, keep), sigma: f.sigma[..keep].to_vec(), v: leading_columns(&f.v, keep) })
}

fn leading_columns<T: Scalar>(m: &DenseTensor<T>, keep: usize) -> DenseTensor<T> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let data = (0..rows).flat_map(|i| m.data()[i * cols..i * cols + keep].iter().copied()).collect();
    DenseTensor::matrix(rows, keep, data).expect("column slice")
}

/// Economy SVD of an `m x n` matrix, rank `min(m, n)`.
///
/// Sign convention: the largest-magnitude entry of every `U` column is
/// positive (first such entry on ties).
pub fn svd<T: Scalar>(a: &DenseTensor<T>) -> Result<Svd<T>, LinalgError> {
    if a.ndim() != 2 {
        return Err(crate::tensor::ShapeError::Rank { expected: 2, got: a.dims().to_vec() }.into());
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut out = if m >= n {
        svd_tall(m, n, a.data())?
    } else {
        let t = a.transpose();
        let s = svd_tall(n, m, t.data())?;
        Svd { u: s.v, sigma: s.sigma, v: s.u }
    };
    fix_signs(&mut out);
    Ok(out)
}

/// Column-major working copy: `cols[j]` is column `j`.
fn to_columns<T: Scalar>(m: usize, n: usize, data: &[T]) -> Vec<Vec<T>> {
    (0..n).map(|j| (0..m).map(|i| data[i * n + j]).collect()).collect()
}

/// Dot product with four independent accumulators (lets the compiler
/// pipeline the multiply-adds).
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let split = n - n % 4;
    for (x, y) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Householder QR of a column-major `m x n` matrix (`m >= n`), in place.
/// Returns the reflector vectors; `cols` is left holding `R` in its top `n` rows.
fn householder_qr<T: Scalar>(m: usize, cols: &mut [Vec<T>]) -> Vec<Vec<T>> {
    let n = cols.len();
    let mut reflectors = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        let mut v = x.to_vec();
        if norm == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if x[0] >= T::zero() { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        let scale = T::of(2.0) / vnorm2;
        cols[k][k] = alpha;
        for x in cols[k][k + 1..m].iter_mut() {
            *x = T::zero();
        }
        for col in cols.iter_mut().skip(k + 1) {
            let s = dot(&v, &col[k..]) * scale;
            for (c, &vi) in col[k..].iter_mut().zip(&v) {
                *c -= s * vi;
            }
        }
        reflectors.push(v);
    }
    reflectors
}

fn apply_q<T: Scalar>(reflectors: &[Vec<T>], col: &mut [T]) {
    for (k, v) in reflectors.iter().enumerate().rev() {
        if v.is_empty() {
            continue;
        }
        let scale = T::of(2.0) / dot(v, v);
        let s = dot(v, &col[k..]) * scale;
        for (c, &vi) in col[k..].iter_mut().zip(v) {
            *c -= s * vi;
        }
    }
}

/// Hestenes rotations on the columns of `g` (each of length `rows`), accumulating into `v`.
fn jacobi_sweeps<T: Scalar>(g: &mut [Vec<T>], v: &mut [Vec<T>]) -> Result<(), LinalgError> {
    let n = g.len();
    let tol = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        // Columns at rounding level relative to the whole matrix are
        // numerically zero; flushing them keeps the sweeps from cycling on
        // noise and lets basis completion supply their U columns.
        let norms: Vec<T> = g.iter().map(|c| dot(c, c)).collect();
        let total: T = norms.iter().copied().sum();
        let floor = T::of(n as f64) * T::epsilon();
        for (c, &a) in g.iter_mut().zip(&norms) {
            if a > T::zero() && a <= floor * floor * total {
                c.iter_mut().for_each(|x| *x = T::zero());
            }
        }
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&g[p], &g[p]);
                let beta = dot(&g[q], &g[q]);
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                let gamma = dot(&g[p], &g[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(g, p, q, c, s);
                rotate(v, p, q, c, s);
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(LinalgError::NoConvergence { iterations: MAX_SWEEPS })
}

#[inline]
fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn svd_tall<T: Scalar>(m: usize, n: usize, data: &[T]) -> Result<Svd<T>, LinalgError> {
    let mut cols = to_columns(m, n, data);
    let precondition = m > n;
    let reflectors = if precondition {
        let r = householder_qr(m, &mut cols);
        for c in cols.iter_mut() {
            c.truncate(n);
        }
        r
    } else {
        Vec::new()
    };
    let rows = cols[0].len();

    let mut v: Vec<Vec<T>> =
        (0..n).map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect()).collect();
    jacobi_sweeps(&mut cols, &mut v)?;

    let mut order: Vec<(T, usize)> = cols.iter().map(|c| (dot(c, c).sqrt(), 0)).collect();
    for (j, o) in order.iter_mut().enumerate() {
        o.1 = j;
    }
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_sorted = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &(s, j)) in order.iter().enumerate() {
        sigma.push(s);
        v_sorted.push(v[j].clone());
        if s > T::min_positive_value() {
            u_cols.push(cols[j].iter().map(|&x| x / s).collect());
        } else {
            u_cols.push(vec![T::zero(); rows]);
            missing.push(slot);
        }
    }
    complete_basis(&mut u_cols, &missing);

    if precondition {
        for c in u_cols.iter_mut() {
            c.resize(m, T::zero());
            apply_q(&reflectors, c);
        }
    }

    let mut u = vec![T::zero(); m * n];
    for (j, c) in u_cols.iter().enumerate() {
        for i in 0..m {
            u[i * n + j] = c[i];
        }
    }
    let mut vm = vec![T::zero(); n * n];
    for (j, c) in v_sorted.iter().enumerate() {
        for i in 0..n {
            vm[i * n + j] = c[i];
        }
    }
    Ok(Svd { u: DenseTensor::matrix(m, n, u)?, sigma, v: DenseTensor::matrix(n, n, vm)? })
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_basis<T: Scalar>(cols: &mut [Vec<T>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < rows, "cannot complete orthonormal basis");
            let mut e = vec![T::zero(); rows];
            e[candidate] = T::one();
            candidate += 1;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == slot {
                        continue;
                    }
                    let p = dot(c, &e);
                    for (x, &y) in e.iter_mut().zip(c) {
                        *x -= p * y;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > T::of(1e-3) {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

fn fix_signs<T: Scalar>(f: &mut Svd<T>) {
    let (m, r) = (f.u.nrows(), f.rank());
    let n = f.v.nrows();
    let mut u = f.u.data().to_vec();
    let mut v = f.v.data().to_vec();
    for k in 0..r {
        let mut best = 0;
        for i in 1..m {
            if u[i * r + k].abs() > u[best * r + k].abs() {
                best = i;
            }
        }
        if u[best * r + k] < T::zero() {
            for i in 0..m {
                u[i * r + k] = -u[i * r + k];
            }
            for i in 0..n {
                v[i * r + k] = -v[i * r + k];
            }
        }
    }
    f.u = DenseTensor::matrix(m, r, u).expect("u dims");
    f.v = DenseTensor::matrix(n, r, v).expect("v dims");
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_error(m: &DenseTensor<f64>) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        let r = g.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.at(i, j) - target).abs());
            }
        }
        worst
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseTensor<f64> {
        DenseTensor::from_fn(vec![rows, cols], |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let s = svd(&DenseTensor::<f64>::identity(3).unwrap()).unwrap();
        for v in &s.sigma {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn outer_product() {
        // |u| = 2, |v| = 3
        let u = [2.0, 0.0, 0.0];
        let v = [0.0, 3.0 / 2f64.sqrt(), 3.0 / 2f64.sqrt(), 0.0];
        let a = DenseTensor::from_fn(vec![3, 4], |i| u[i / 4] * v[i % 4]).unwrap();
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 6.0).abs() < 1e-13);
        assert!(s.sigma[1..].iter().all(|&x| x < 1e-13));
        assert!(orthonormality_error(&s.u) < 1e-12);
    }

    #[test]
    fn reconstruction_and_orthonormality_across_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, n) in &[(1, 1), (1, 5), (5, 1), (6, 8), (8, 6), (30, 7), (7, 30), (12, 12)] {
            for _ in 0..100 {
                let a = random(m, n, &mut rng);
                let s = svd(&a).unwrap_or_else(|e| panic!("{m}x{n} {e:?}"));
                let err = s.reconstruct().sub(&a).unwrap().frobenius_norm();
                assert!(err <= 1e-9 * a.frobenius_norm(), "{m}x{n}: {err}");
                assert!(orthonormality_error(&s.u) < 1e-10);
                assert!(orthonormality_error(&s.v) < 1e-10);
                assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn rank_deficient_basis_is_completed() {
        let a = DenseTensor::<f64>::zeros(vec![4, 3]).unwrap();
        let s = svd(&a).unwrap();
        assert_eq!(s.sigma, vec![0.0; 3]);
        assert!(orthonormality_error(&s.u) < 1e-12);
        assert!(orthonormality_error(&s.v) < 1e-12);
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = svd(&random(9, 4, &mut rng)).unwrap();
        for k in 0..4 {
            let col = s.u.column(k);
            let best = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(best > 0.0);
        }
    }

    #[test]
    fn truncation_rules() {
        let f = Svd {
            u: DenseTensor::<f64>::identity(3).unwrap(),
            sigma: vec![10.0, 1.0, 1e-5],
            v: DenseTensor::identity(3).unwrap(),
        };
        assert_eq!(truncate(&f, TruncationRule::Tolerance(5e-4)).unwrap().rank(), 2);
        let one =
            Svd { u: DenseTensor::<f64>::identity(1).unwrap(), sigma: vec![3.0], v: DenseTensor::identity(1).unwrap() };
        assert_eq!(truncate(&one, TruncationRule::Rank(5)).unwrap().rank(), 1);
        assert!(truncate(&f, TruncationRule::Rank(0)).is_err());
        assert!(truncate(&f, TruncationRule::Tolerance(0.0)).is_err());
        assert!(truncate(&f, TruncationRule::Tolerance(-1.0)).is_err());
    }

    #[test]
    fn exact_rank_truncation_has_zero_error() {
        let diag = [4.0, 3.0, 0.0, 0.0];
        let a = DenseTensor::from_fn(vec![4, 4], |i| if i / 4 == i % 4 { diag[i / 4] } else { 0.0 }).unwrap();
        let t = truncate(&svd(&a).unwrap(), TruncationRule::Rank(2)).unwrap();
        assert_eq!(t.reconstruct().sub(&a).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn generic_over_f32() {
        let a = DenseTensor::<f32>::from_fn(vec![5, 3], |i| (i as f32 * 0.37).sin()).unwrap();
        let s = svd(&a).unwrap();
        let err = s.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(err < 1e-5 * a.frobenius_norm());
    }
}
