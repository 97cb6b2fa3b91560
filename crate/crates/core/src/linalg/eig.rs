//! Nonsymmetric eigendecomposition: Householder reduction to Hessenberg form,
//! Francis double-shift QR to real Schur form, a unitary rotation of each
//! 2x2 block to complex triangular form, then back-substitution.

use num_complex::Complex;

use super::LinalgError;
use crate::scalar::Scalar;
use crate::tensor::{ComplexDenseTensor, DenseTensor};

/// Eigenvalues and unit-norm eigenvectors (columns of `vectors`).
#[derive(Debug, Clone, PartialEq)]
pub struct Eig<T: Scalar> {
    pub values: Vec<Complex<T>>,
    /// `[n, n]`; column `m` pairs with `values[m]`.
    pub vectors: ComplexDenseTensor<T>,
}

impl<T: Scalar> Eig<T> {
    pub fn vector(&self, m: usize) -> Vec<Complex<T>> {
        let n = self.values.len();
        (0..n).map(|i| self.vectors.value(i * n + m)).collect()
    }
}

struct Mat<T> {
    n: usize,
    a: Vec<T>,
}

impl<T: Copy> Mat<T> {
    #[inline]
    fn get(&self, i: usize, j: usize) -> T {
        self.a[i * self.n + j]
    }
    #[inline]
    fn set(&mut self, i: usize, j: usize, v: T) {
        self.a[i * self.n + j] = v;
    }
}

pub fn eig<T: Scalar>(a: &DenseTensor<T>) -> Result<Eig<T>, LinalgError> {
    if a.ndim() != 2 || a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare(a.dims().to_vec()));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = a.nrows();
    let mut h = Mat { n, a: a.data().to_vec() };
    let mut z = Mat { n, a: DenseTensor::<T>::identity(n)?.into_data() };
    hessenberg(&mut h, &mut z);
    francis_schur(&mut h, &mut z)?;

    let mut t: Mat<Complex<T>> = Mat { n, a: h.a.iter().map(|&x| Complex::new(x, T::zero())).collect() };
    let mut q: Mat<Complex<T>> = Mat { n, a: z.a.iter().map(|&x| Complex::new(x, T::zero())).collect() };
    // index of the first member of each conjugate pair, keyed by its partner
    let mut partner = vec![None; n];
    let mut i = 0;
    while i < n {
        if i + 1 < n && h.get(i + 1, i) != T::zero() {
            triangularize_block(&mut t, &mut q, i);
            partner[i + 1] = Some(i);
            i += 2;
        } else {
            i += 1;
        }
    }

    let norm = t.a.iter().map(|c| c.norm()).fold(T::zero(), T::max);
    let small = (norm * T::epsilon()).max(T::min_positive_value());
    let mut values: Vec<Complex<T>> = Vec::with_capacity(n);
    let mut vectors: Vec<Vec<Complex<T>>> = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = match partner[k] {
            Some(p) => values[p].conj(),
            None => t.get(k, k),
        };
        let v = match partner[k] {
            Some(p) => vectors[p].iter().map(|c: &Complex<T>| c.conj()).collect(),
            None => {
                let mut v = schur_eigenvector(&t, &q, k, lambda, small);
                if lambda.im == T::zero() {
                    for c in v.iter_mut() {
                        c.im = T::zero();
                    }
                    normalize(&mut v);
                }
                v
            }
        };
        values.push(lambda);
        vectors.push(v);
    }

    let mut flat = vec![Complex::new(T::zero(), T::zero()); n * n];
    for (m, v) in vectors.iter().enumerate() {
        for (row, &c) in v.iter().enumerate() {
            flat[row * n + m] = c;
        }
    }
    Ok(Eig { values, vectors: ComplexDenseTensor::from_complex(vec![n, n], &flat)? })
}

fn normalize<T: Scalar>(v: &mut [Complex<T>]) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
    if norm > T::zero() {
        for c in v.iter_mut() {
            *c /= norm;
        }
    }
}

/// Householder reduction `H = Z^T A Z`, accumulating `Z`.
fn hessenberg<T: Scalar>(h: &mut Mat<T>, z: &mut Mat<T>) {
    let n = h.n;
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let x: Vec<T> = (k + 1..n).map(|i| h.get(i, k)).collect();
        let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if x[0] >= T::zero() { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vn2 = v.iter().map(|&e| e * e).sum::<T>();
        if vn2 == T::zero() {
            continue;
        }
        let scale = T::of(2.0) / vn2;
        // H <- P H
        for j in 0..n {
            let s = (0..v.len()).map(|t| v[t] * h.get(k + 1 + t, j)).sum::<T>() * scale;
            for (t, &vt) in v.iter().enumerate() {
                let cur = h.get(k + 1 + t, j);
                h.set(k + 1 + t, j, cur - s * vt);
            }
        }
        // H <- H P, Z <- Z P
        for m in [&mut *h, &mut *z] {
            for i in 0..n {
                let s = (0..v.len()).map(|t| v[t] * m.get(i, k + 1 + t)).sum::<T>() * scale;
                for (t, &vt) in v.iter().enumerate() {
                    let cur = m.get(i, k + 1 + t);
                    m.set(i, k + 1 + t, cur - s * vt);
                }
            }
        }
        for i in k + 2..n {
            h.set(i, k, T::zero());
        }
    }
}

/// Applies the reflector `I - 2 v v^T / |v|^2` (v of length 3 or 2 starting at
/// row/col `k`) as a similarity to `h` on the given ranges, and to `z`.
fn reflect<T: Scalar>(h: &mut Mat<T>, z: &mut Mat<T>, k: usize, v: &[T], col_from: usize, row_to: usize) {
    let n = h.n;
    let vn2 = v.iter().map(|&e| e * e).sum::<T>();
    if vn2 == T::zero() {
        return;
    }
    let scale = T::of(2.0) / vn2;
    for j in col_from..n {
        let s = v.iter().enumerate().map(|(t, &vt)| vt * h.get(k + t, j)).sum::<T>() * scale;
        for (t, &vt) in v.iter().enumerate() {
            let cur = h.get(k + t, j);
            h.set(k + t, j, cur - s * vt);
        }
    }
    for i in 0..=row_to {
        let s = v.iter().enumerate().map(|(t, &vt)| vt * h.get(i, k + t)).sum::<T>() * scale;
        for (t, &vt) in v.iter().enumerate() {
            let cur = h.get(i, k + t);
            h.set(i, k + t, cur - s * vt);
        }
    }
    for i in 0..n {
        let s = v.iter().enumerate().map(|(t, &vt)| vt * z.get(i, k + t)).sum::<T>() * scale;
        for (t, &vt) in v.iter().enumerate() {
            let cur = z.get(i, k + t);
            z.set(i, k + t, cur - s * vt);
        }
    }
}

fn householder_vector<T: Scalar>(x: &[T]) -> Vec<T> {
    let norm = x.iter().map(|&e| e * e).sum::<T>().sqrt();
    let mut v = x.to_vec();
    if norm == T::zero() {
        return v.iter().map(|_| T::zero()).collect();
    }
    let alpha = if x[0] >= T::zero() { -norm } else { norm };
    v[0] -= alpha;
    v
}

/// Rotation `G = [[c, s], [-s, c]]` applied as `G H G^T` on rows/cols `p, p+1`.
fn givens<T: Scalar>(h: &mut Mat<T>, z: &mut Mat<T>, p: usize, c: T, s: T, col_from: usize, row_to: usize) {
    let n = h.n;
    for j in col_from..n {
        let (a, b) = (h.get(p, j), h.get(p + 1, j));
        h.set(p, j, c * a + s * b);
        h.set(p + 1, j, -s * a + c * b);
    }
    for i in 0..=row_to {
        let (a, b) = (h.get(i, p), h.get(i, p + 1));
        h.set(i, p, c * a + s * b);
        h.set(i, p + 1, -s * a + c * b);
    }
    for i in 0..n {
        let (a, b) = (z.get(i, p), z.get(i, p + 1));
        z.set(i, p, c * a + s * b);
        z.set(i, p + 1, -s * a + c * b);
    }
}

/// Real Schur form by implicit double-shift QR; 2x2 diagonal blocks remain only
/// for complex-conjugate pairs.
fn francis_schur<T: Scalar>(h: &mut Mat<T>, z: &mut Mat<T>) -> Result<(), LinalgError> {
    let n = h.n;
    if n == 0 {
        return Ok(());
    }
    let cap = 100 * n.max(1);
    let eps = T::epsilon();
    let anorm = h.a.iter().map(|v| v.abs()).sum::<T>();
    let mut total = 0usize;
    let mut its = 0usize;
    let mut hi = n - 1;
    loop {
        // locate the start of the active unreduced block
        let mut l = hi;
        while l > 0 {
            let mut s = h.get(l - 1, l - 1).abs() + h.get(l, l).abs();
            if s == T::zero() {
                s = anorm;
            }
            if h.get(l, l - 1).abs() <= eps * s {
                h.set(l, l - 1, T::zero());
                break;
            }
            l -= 1;
        }

        if l == hi {
            its = 0;
            if hi == 0 {
                return Ok(());
            }
            hi -= 1;
            continue;
        }
        if l + 1 == hi {
            split_real_block(h, z, hi - 1);
            its = 0;
            if hi < 2 {
                return Ok(());
            }
            hi -= 2;
            continue;
        }

        total += 1;
        its += 1;
        if total > cap {
            return Err(LinalgError::NoConvergence { iterations: total });
        }

        let (s, t) = if its % 11 == 10 {
            let w = h.get(hi, hi - 1).abs() + h.get(hi - 1, hi - 2).abs();
            (T::of(1.5) * w, w * w)
        } else {
            let (a, b) = (h.get(hi - 1, hi - 1), h.get(hi - 1, hi));
            let (c, d) = (h.get(hi, hi - 1), h.get(hi, hi));
            (a + d, a * d - b * c)
        };

        let mut x = h.get(l, l) * h.get(l, l) + h.get(l, l + 1) * h.get(l + 1, l) - s * h.get(l, l) + t;
        let mut y = h.get(l + 1, l) * (h.get(l, l) + h.get(l + 1, l + 1) - s);
        let mut w = h.get(l + 1, l) * h.get(l + 2, l + 1);
        for k in l..hi - 1 {
            let v = householder_vector(&[x, y, w]);
            let col_from = if k > l { k - 1 } else { l };
            let row_to = (k + 3).min(hi);
            reflect(h, z, k, &v, col_from, row_to);
            if k > l {
                h.set(k + 1, k - 1, T::zero());
                h.set(k + 2, k - 1, T::zero());
            }
            x = h.get(k + 1, k);
            y = h.get(k + 2, k);
            if k + 3 <= hi {
                w = h.get(k + 3, k);
            }
        }
        let r = x.hypot(y);
        if r != T::zero() {
            givens(h, z, hi - 1, x / r, y / r, hi - 2, hi);
            h.set(hi, hi - 2, T::zero());
        }
    }
}

/// If the 2x2 block at `p` has real eigenvalues, rotate it to upper-triangular.
fn split_real_block<T: Scalar>(h: &mut Mat<T>, z: &mut Mat<T>, p: usize) {
    let (a, b) = (h.get(p, p), h.get(p, p + 1));
    let (c, d) = (h.get(p + 1, p), h.get(p + 1, p + 1));
    if c == T::zero() {
        return;
    }
    let half = (a - d) / T::of(2.0);
    let disc = half * half + b * c;
    if disc < T::zero() {
        return;
    }
    let root = disc.sqrt();
    let mean = (a + d) / T::of(2.0);
    // the eigenvalue farther from the mean of the other gives a stable vector
    let lambda = if half >= T::zero() { mean + root } else { mean - root };
    let (x0, x1) = {
        let u = (b, lambda - a);
        let w = (lambda - d, c);
        if u.0.hypot(u.1) >= w.0.hypot(w.1) {
            u
        } else {
            w
        }
    };
    let r = x0.hypot(x1);
    if r == T::zero() {
        return;
    }
    let n = h.n;
    givens(h, z, p, x0 / r, x1 / r, p, (p + 1).min(n - 1));
    h.set(p + 1, p, T::zero());
}

/// Unitary 2x2 rotation making a complex-pair block upper triangular.
fn triangularize_block<T: Scalar>(t: &mut Mat<Complex<T>>, q: &mut Mat<Complex<T>>, p: usize) {
    let n = t.n;
    let (a, b) = (t.get(p, p), t.get(p, p + 1));
    let (c, d) = (t.get(p + 1, p), t.get(p + 1, p + 1));
    let two = T::of(2.0);
    let half = (a - d) / two;
    let disc = half * half + b * c;
    let mean = (a + d) / two;
    let mut lambda = mean + disc.sqrt();
    if lambda.im < T::zero() {
        lambda = mean - disc.sqrt();
    }
    let u = (b, lambda - a);
    let w = (lambda - d, c);
    let (x0, x1) = if u.0.norm_sqr() + u.1.norm_sqr() >= w.0.norm_sqr() + w.1.norm_sqr() { u } else { w };
    let r = (x0.norm_sqr() + x1.norm_sqr()).sqrt();
    let (w0, w1) = (x0 / r, x1 / r);
    // W = [[w0, -conj(w1)], [w1, conj(w0)]]; T <- W^H T W, Q <- Q W
    for j in p..n {
        let (r0, r1) = (t.get(p, j), t.get(p + 1, j));
        t.set(p, j, w0.conj() * r0 + w1.conj() * r1);
        t.set(p + 1, j, -w1 * r0 + w0 * r1);
    }
    for i in 0..=p + 1 {
        let (c0, c1) = (t.get(i, p), t.get(i, p + 1));
        t.set(i, p, c0 * w0 + c1 * w1);
        t.set(i, p + 1, -c0 * w1.conj() + c1 * w0.conj());
    }
    for i in 0..n {
        let (c0, c1) = (q.get(i, p), q.get(i, p + 1));
        q.set(i, p, c0 * w0 + c1 * w1);
        q.set(i, p + 1, -c0 * w1.conj() + c1 * w0.conj());
    }
    t.set(p + 1, p, Complex::new(T::zero(), T::zero()));
    t.set(p, p, lambda);
    t.set(p + 1, p + 1, lambda.conj());
}

fn schur_eigenvector<T: Scalar>(
    t: &Mat<Complex<T>>,
    q: &Mat<Complex<T>>,
    k: usize,
    lambda: Complex<T>,
    small: T,
) -> Vec<Complex<T>> {
    let n = t.n;
    let zero = Complex::new(T::zero(), T::zero());
    let mut y = vec![zero; k + 1];
    y[k] = Complex::new(T::one(), T::zero());
    let big = T::one() / (small * T::of(1e4)).max(T::min_positive_value());
    for i in (0..k).rev() {
        let mut sum = zero;
        for j in i + 1..=k {
            sum += t.get(i, j) * y[j];
        }
        let mut denom = t.get(i, i) - lambda;
        if denom.norm() < small {
            denom = Complex::new(small, T::zero());
        }
        y[i] = -sum / denom;
        if y[i].norm() > big {
            let s = y[i].norm();
            for v in y.iter_mut() {
                *v /= s;
            }
        }
    }
    let mut v: Vec<Complex<T>> = (0..n).map(|row| (0..=k).fold(zero, |acc, j| acc + q.get(row, j) * y[j])).collect();
    normalize(&mut v);
    v
}
