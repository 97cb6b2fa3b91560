use num_complex::Complex;

use super::LinalgError;
use crate::scalar::Scalar;
use crate::tensor::{ComplexDenseTensor, DenseTensor, ShapeError};

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution<T: Scalar> {
    /// `[n, k]`
    pub x: ComplexDenseTensor<T>,
    /// Numerical rank detected by the pivoted QR.
    pub rank: usize,
    /// True when `rank < n`; `x` is then the minimum-norm solution.
    pub rank_deficient: bool,
}

type C<T> = Complex<T>;

fn czero<T: Scalar>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

/// Column-major complex working matrix.
struct Cols<T: Scalar> {
    rows: usize,
    cols: Vec<Vec<C<T>>>,
}

impl<T: Scalar> Cols<T> {
    fn from_tensor(t: &ComplexDenseTensor<T>) -> Self {
        let (m, n) = (t.dims()[0], t.dims()[1]);
        Self { rows: m, cols: (0..n).map(|j| (0..m).map(|i| t.value(i * n + j)).collect()).collect() }
    }
}

/// Householder reflector `I - tau v v^H` mapping `x` to `alpha e1`. Returns `(v, tau, alpha)`.
fn reflector<T: Scalar>(x: &[C<T>]) -> (Vec<C<T>>, T, C<T>) {
    let norm = x.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
    if norm == T::zero() {
        return (vec![czero(); x.len()], T::zero(), czero());
    }
    let phase = if x[0].norm() == T::zero() { Complex::new(T::one(), T::zero()) } else { x[0] / x[0].norm() };
    let alpha = -phase * norm;
    let mut v = x.to_vec();
    v[0] -= alpha;
    let vn2 = v.iter().map(|c| c.norm_sqr()).sum::<T>();
    let tau = if vn2 == T::zero() { T::zero() } else { T::of(2.0) / vn2 };
    (v, tau, alpha)
}

fn apply_reflector<T: Scalar>(v: &[C<T>], tau: T, target: &mut [C<T>]) {
    if tau == T::zero() {
        return;
    }
    let s = v.iter().zip(target.iter()).fold(czero(), |acc, (vi, ti)| acc + vi.conj() * ti) * tau;
    for (t, &vi) in target.iter_mut().zip(v) {
        *t -= vi * s;
    }
}

/// Householder reflector `(v, tau)`.
type Reflector<T> = (Vec<C<T>>, T);

/// Unpivoted QR of an `m x r` column set (`m >= r`): returns reflectors and `R` (upper, `r x r`).
fn qr<T: Scalar>(mut a: Cols<T>) -> (Vec<Reflector<T>>, Vec<Vec<C<T>>>) {
    let r = a.cols.len();
    let mut refl = Vec::with_capacity(r);
    for k in 0..r {
        let (v, tau, alpha) = reflector(&a.cols[k][k..]);
        a.cols[k][k] = alpha;
        for x in a.cols[k][k + 1..].iter_mut() {
            *x = czero();
        }
        for j in k + 1..r {
            apply_reflector(&v, tau, &mut a.cols[j][k..]);
        }
        refl.push((v, tau));
    }
    let rmat = a.cols.iter().map(|c| c[..r].to_vec()).collect();
    (refl, rmat)
}

/// Least-squares solve `min |A x - b|_F` by column-pivoted Householder QR.
/// Rank-deficient systems get the minimum-norm solution via a second QR of
/// the leading row block.
pub fn lstsq<T: Scalar>(a: &ComplexDenseTensor<T>, b: &ComplexDenseTensor<T>) -> Result<LstsqSolution<T>, LinalgError> {
    if a.dims().len() != 2 || b.dims().len() != 2 || a.dims()[0] != b.dims()[0] {
        return Err(ShapeError::Incompatible(a.dims().to_vec(), b.dims().to_vec()).into());
    }
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let k = b.dims()[1];
    if m < n {
        return Err(LinalgError::Underdetermined { rows: m, cols: n });
    }
    let finite = |t: &ComplexDenseTensor<T>| t.re().iter().chain(t.im()).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(LinalgError::NonFinite);
    }

    let mut w = Cols::from_tensor(a);
    let mut rhs = Cols::from_tensor(b);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag_abs = Vec::with_capacity(n);

    for step in 0..n {
        // pivot: largest remaining column norm
        let mut best = step;
        let mut best_norm = T::neg_infinity();
        for j in step..n {
            let nrm = w.cols[j][step..].iter().map(|c| c.norm_sqr()).sum::<T>();
            if nrm > best_norm {
                best_norm = nrm;
                best = j;
            }
        }
        w.cols.swap(step, best);
        perm.swap(step, best);

        let (v, tau, alpha) = reflector(&w.cols[step][step..]);
        w.cols[step][step] = alpha;
        for x in w.cols[step][step + 1..].iter_mut() {
            *x = czero();
        }
        for j in step + 1..n {
            apply_reflector(&v, tau, &mut w.cols[j][step..]);
        }
        for col in rhs.cols.iter_mut() {
            apply_reflector(&v, tau, &mut col[step..]);
        }
        diag_abs.push(alpha.norm());
    }

    let tol = T::of(m.max(n) as f64) * T::epsilon() * diag_abs.first().copied().unwrap_or(T::zero());
    let rank = diag_abs.iter().take_while(|&&d| d > tol && d > T::zero()).count();

    // solution in pivoted coordinates, one column per rhs
    let mut z = vec![vec![czero::<T>(); n]; k];
    if rank == n {
        for (c, col) in rhs.cols.iter().enumerate() {
            for i in (0..n).rev() {
                let mut s = col[i];
                for j in i + 1..n {
                    s -= w.cols[j][i] * z[c][j];
                }
                z[c][i] = s / w.cols[i][i];
            }
        }
    } else if rank > 0 {
        // W = [R11 R12] (rank x n); W^H = Q2 R2  =>  z = Q2 R2^{-H} c
        let wh = Cols { rows: n, cols: (0..rank).map(|i| (0..n).map(|j| w.cols[j][i].conj()).collect()).collect() };
        let (refl2, r2) = qr(wh);
        for (c, col) in rhs.cols.iter().enumerate() {
            // forward-substitute R2^H y = c[..rank]; r2[j][i] is R2(i, j)
            let mut y = vec![czero::<T>(); n];
            for i in 0..rank {
                let mut s = col[i];
                for j in 0..i {
                    s -= r2[i][j].conj() * y[j];
                }
                y[i] = s / r2[i][i].conj();
            }
            for (kk, (v, tau)) in refl2.iter().enumerate().rev() {
                apply_reflector(v, *tau, &mut y[kk..]);
            }
            z[c] = y;
        }
    }

    let mut x = vec![czero::<T>(); n * k];
    for (c, zc) in z.iter().enumerate() {
        for (pos, &orig) in perm.iter().enumerate() {
            x[orig * k + c] = zc[pos];
        }
    }
    debug_assert_eq!(w.rows, m);
    Ok(LstsqSolution { x: ComplexDenseTensor::from_complex(vec![n, k], &x)?, rank, rank_deficient: rank < n })
}

/// Real least squares through the complex solver.
pub fn lstsq_real<T: Scalar>(a: &DenseTensor<T>, b: &DenseTensor<T>) -> Result<(DenseTensor<T>, usize), LinalgError> {
    let s = lstsq(&ComplexDenseTensor::from_real(a), &ComplexDenseTensor::from_real(b))?;
    Ok((s.x.real_part(), s.rank))
}
