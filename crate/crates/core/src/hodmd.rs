//! Iterative multidimensional higher-order DMD (DMD-d): delay embedding,
//! reduced Koopman operator, eigendecomposition, amplitude fitting,
//! amplitude-tolerance mode selection, modal reconstruction, and the outer
//! loop that repeats HOSVD + DMD-d until the retained HOSVD ranks settle.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::io::{ByteReader, ByteWriter, FormatError};
use crate::linalg::{eig, lstsq, svd, truncate, LinalgError, TruncationRule};
use crate::modal::{hosvd, mode_product, ModalError};
use crate::tensor::{ComplexDenseTensor, DenseTensor, ShapeError, VideoSequence};

pub const SPECTRUM_MAGIC: &[u8; 4] = b"MDSP";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HodmdError {
    #[error("sequence has {k} snapshots, fewer than the required {min}")]
    SequenceTooShort { k: usize, min: usize },
    #[error("delay index d={d} needs at least d+2={} snapshots, got {k}", d + 2)]
    TooFewForDelay { k: usize, d: usize },
    #[error("invalid HODMD configuration: {0}")]
    BadConfig(String),
    #[error("input video is identically zero")]
    ZeroInput,
    #[error("spectrum has no modes")]
    EmptySpectrum,
    #[error(transparent)]
    Modal(#[from] ModalError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HodmdConfig {
    /// Delay index.
    pub d: usize,
    /// Tolerance of the HOSVD and of the delay-embedded SVD.
    pub eps_svd: f64,
    /// Modes with `a_m / a_0 <= eps_dmd` are discarded.
    pub eps_dmd: f64,
    pub dt_seconds: f64,
    pub min_snapshots: usize,
    pub max_outer_iters: usize,
    /// Optional `[f_lo, f_hi]` band in Hz on `|omega| / 2pi`; disabled by default.
    #[serde(default)]
    pub band_hz: Option<(f64, f64)>,
}

impl HodmdConfig {
    /// Reference settings for a `k`-snapshot sequence: `d = floor(K/5)`,
    /// both tolerances `5e-4`, `dt = 4 ms`, 100-snapshot gate.
    pub fn reference(k: usize) -> Self {
        Self {
            d: delay_for(k),
            eps_svd: 5e-4,
            eps_dmd: 5e-4,
            dt_seconds: 0.004,
            min_snapshots: 100,
            max_outer_iters: 10,
            band_hz: None,
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), HodmdError> {
        if !(self.eps_svd > 0.0 && self.eps_dmd > 0.0) {
            return Err(HodmdError::BadConfig(format!(
                "tolerances must be > 0 (eps_svd={}, eps_dmd={})",
                self.eps_svd, self.eps_dmd
            )));
        }
        if !(self.dt_seconds > 0.0 && self.dt_seconds.is_finite()) {
            return Err(HodmdError::BadConfig(format!("dt must be > 0, got {}", self.dt_seconds)));
        }
        if self.max_outer_iters == 0 || self.min_snapshots == 0 {
            return Err(HodmdError::BadConfig("max_outer_iters and min_snapshots must be >= 1".into()));
        }
        if self.d == 0 {
            return Err(HodmdError::BadConfig("d must be >= 1".into()));
        }
        if k < self.d + 2 {
            return Err(HodmdError::TooFewForDelay { k, d: self.d });
        }
        if let Some((lo, hi)) = self.band_hz {
            if !(lo >= 0.0 && hi > lo) {
                return Err(HodmdError::BadConfig(format!("bad band [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Default delay rule `d = floor(K/5)`, at least 1.
pub fn delay_for(k: usize) -> usize {
    (k / 5).max(1)
}

/// One term of the modal expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdMode {
    /// Unit Frobenius norm; `[r]` in reduced coordinates, `[N_x, N_y]` in pixel space.
    pub u: ComplexDenseTensor<f64>,
    pub a: f64,
    /// Growth rate, 1/s.
    pub delta: f64,
    /// Angular frequency, rad/s, in `(-pi/dt, pi/dt]`.
    pub omega: f64,
    pub mu: Complex64,
}

impl DmdMode {
    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * std::f64::consts::PI)
    }

    /// Energy the mode contributes over `k` snapshots, `a^2 sum_j |mu|^{2j}`.
    /// Unlike `a`, this discounts transients that decay within a few samples.
    pub fn energy(&self, k: usize) -> f64 {
        let g = self.mu.norm_sqr();
        let sum = if (g - 1.0).abs() < 1e-12 { k as f64 } else { (1.0 - g.powi(k as i32)) / (1.0 - g) };
        self.a * self.a * sum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmdSpectrum {
    /// Sorted by amplitude, descending.
    pub modes: Vec<DmdMode>,
    pub dt_seconds: f64,
    pub t1: f64,
    /// Sampled timespan `T = (K-1) dt`.
    pub timespan: f64,
    pub retained_hosvd_ranks: Vec<usize>,
}

impl DmdSpectrum {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// The `n` modes with the largest energy over the sampled window.
    pub fn dominant(&self, n: usize) -> Vec<&DmdMode> {
        let k = (self.timespan / self.dt_seconds).round() as usize + 1;
        let mut by_energy: Vec<&DmdMode> = self.modes.iter().collect();
        by_energy.sort_by(|x, y| y.energy(k).total_cmp(&x.energy(k)));
        by_energy.truncate(n);
        by_energy
    }

    /// Snapshot times `t1 + k dt` for `k < K`.
    pub fn snapshot_times(&self, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.t1 + i as f64 * self.dt_seconds).collect()
    }
}

/// Output of [`hodmd_iterative`].
#[derive(Debug, Clone, PartialEq)]
pub struct HodmdResult {
    /// Modes lifted to `[N_x, N_y]` pixel space.
    pub spectrum: DmdSpectrum,
    /// `[N_x, N_y, K]`
    pub reconstruction: DenseTensor<f64>,
    pub outer_iterations: usize,
}

/// Delay-embedded matrix `[d r, K-d+1]`; block `i` of column `k` is `v_{k+i}`.
fn delay_embed(v: &DenseTensor<f64>, d: usize) -> DenseTensor<f64> {
    let (r, k) = (v.nrows(), v.ncols());
    let cols = k - d + 1;
    let mut out = vec![0.0; d * r * cols];
    for i in 0..d {
        for row in 0..r {
            let src = &v.data()[row * k + i..row * k + i + cols];
            out[(i * r + row) * cols..(i * r + row + 1) * cols].copy_from_slice(src);
        }
    }
    DenseTensor::matrix(d * r, cols, out).expect("delay dims")
}

/// `T2 T1^+` through the SVD of `T1`, cutting singular values at the usual
/// numerical-rank threshold.
fn koopman_fit(t: &DenseTensor<f64>) -> Result<DenseTensor<f64>, HodmdError> {
    let (r, n) = (t.nrows(), t.ncols());
    let slice = |from: usize| {
        let data = (0..r).flat_map(|i| t.data()[i * n + from..i * n + from + n - 1].iter().copied()).collect();
        DenseTensor::matrix(r, n - 1, data).expect("window dims")
    };
    let (t1, t2) = (slice(0), slice(1));
    let f = svd(&t1)?;
    let cut = f.sigma[0] * r.max(n - 1) as f64 * f64::EPSILON;
    let rank = f.sigma.iter().filter(|&&s| s > cut).count();
    // R = T2 W S^-1 U^T
    let mut ws = vec![0.0; (n - 1) * rank];
    for j in 0..n - 1 {
        for c in 0..rank {
            ws[j * rank + c] = f.v.at(j, c) / f.sigma[c];
        }
    }
    let ws = DenseTensor::matrix(n - 1, rank, ws)?;
    let ut = DenseTensor::matrix(
        rank,
        r,
        (0..rank).flat_map(|c| (0..r).map(move |i| (c, i))).map(|(c, i)| f.u.at(i, c)).collect(),
    )?;
    Ok(t2.matmul(&ws)?.matmul(&ut)?)
}

fn empty_spectrum(dt: f64, k: usize) -> DmdSpectrum {
    DmdSpectrum {
        modes: Vec::new(),
        dt_seconds: dt,
        t1: 0.0,
        timespan: (k - 1) as f64 * dt,
        retained_hosvd_ranks: Vec::new(),
    }
}

/// DMD-d on reduced snapshots `[r, K]`. Mode vectors stay in the reduced
/// coordinates (`u` has dims `[r]`). Identically zero input yields an empty
/// spectrum.
pub fn dmd_d(reduced: &DenseTensor<f64>, cfg: &HodmdConfig) -> Result<DmdSpectrum, HodmdError> {
    if reduced.ndim() != 2 {
        return Err(ShapeError::Rank { expected: 2, got: reduced.dims().to_vec() }.into());
    }
    let (r, k) = (reduced.nrows(), reduced.ncols());
    cfg.validate(k)?;
    if !reduced.is_finite() {
        return Err(LinalgError::NonFinite.into());
    }
    if reduced.data().iter().all(|&v| v == 0.0) {
        return Ok(empty_spectrum(cfg.dt_seconds, k));
    }

    // (1)-(2) delay embedding and its truncated SVD
    let embedded = delay_embed(reduced, cfg.d);
    let f = truncate(&svd(&embedded)?, TruncationRule::Tolerance(cfg.eps_svd))?;
    let rp = f.rank();
    let cols = embedded.ncols();
    let mut tred = vec![0.0; rp * cols];
    for c in 0..rp {
        for j in 0..cols {
            tred[c * cols + j] = f.sigma[c] * f.v.at(j, c);
        }
    }
    let tred = DenseTensor::matrix(rp, cols, tred)?;

    // (3)-(4) Koopman operator and its eigenpairs
    let op = koopman_fit(&tred)?;
    let e = eig(&op)?;

    // Lead block of the delay-space modes: phi_m = U[0..r, :] q_m
    let mut phis: Vec<Vec<Complex64>> = Vec::new();
    let mut mus = Vec::new();
    for (m, &mu) in e.values.iter().enumerate() {
        if mu.norm() == 0.0 || !mu.is_finite() {
            continue;
        }
        let q = e.vector(m);
        let phi: Vec<Complex64> = (0..r).map(|i| (0..rp).map(|c| q[c] * f.u.at(i, c)).sum()).collect();
        if phi.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        phis.push(phi);
        mus.push(mu);
    }
    if mus.is_empty() {
        return Ok(empty_spectrum(cfg.dt_seconds, k));
    }

    // (6) amplitudes: one least-squares fit of the expansion over all K snapshots
    let b = fit_amplitudes(reduced, &phis, &mus)?;

    // (5) rates and (7) selection
    let dt = cfg.dt_seconds;
    let mut modes = Vec::new();
    for ((phi, &mu), &bm) in phis.iter().zip(&mus).zip(&b) {
        let norm = phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let a = bm.norm() * norm;
        if !(a > 0.0) {
            continue;
        }
        let scale = bm / a;
        let u: Vec<Complex64> = phi.iter().map(|&z| z * scale).collect();
        let rate = mu.ln() / dt;
        modes.push(DmdMode {
            u: ComplexDenseTensor::from_complex(vec![r], &u)?,
            a,
            delta: rate.re,
            omega: rate.im,
            mu,
        });
    }
    Ok(DmdSpectrum {
        modes: select_modes(modes, cfg),
        dt_seconds: dt,
        t1: 0.0,
        timespan: (k - 1) as f64 * dt,
        retained_hosvd_ranks: Vec::new(),
    })
}

/// Least squares `min sum_k |v_k - sum_m b_m phi_m mu_m^k|^2`.
///
/// The design matrix `[phi_m mu_m^k]` has `r K` rows, so the problem is
/// solved through its Gram matrix `(Phi^H Phi) o (sum_k conj(mu_i^k) mu_j^k)`
/// (pivoted QR of an `M x M` system) followed by one step of iterative
/// refinement against the full residual.
fn fit_amplitudes(
    v: &DenseTensor<f64>,
    phis: &[Vec<Complex64>],
    mus: &[Complex64],
) -> Result<Vec<Complex64>, HodmdError> {
    let (r, k, m) = (v.nrows(), v.ncols(), mus.len());
    let zero = Complex64::new(0.0, 0.0);
    let powers: Vec<Vec<Complex64>> = mus
        .iter()
        .map(|&mu| {
            let mut p = Complex64::new(1.0, 0.0);
            (0..k)
                .map(|_| {
                    let cur = p;
                    p *= mu;
                    cur
                })
                .collect()
        })
        .collect();
    let mut gram = vec![zero; m * m];
    for i in 0..m {
        for j in i..m {
            let spatial: Complex64 = phis[i].iter().zip(&phis[j]).map(|(a, b)| a.conj() * b).sum();
            let temporal: Complex64 = powers[i].iter().zip(&powers[j]).map(|(a, b)| a.conj() * b).sum();
            gram[i * m + j] = spatial * temporal;
            gram[j * m + i] = (spatial * temporal).conj();
        }
    }
    let gram = ComplexDenseTensor::from_complex(vec![m, m], &gram)?;
    // A^H e for a residual e given as [r, K] complex
    let project = |e: &[Complex64]| -> Vec<Complex64> {
        (0..m)
            .map(|i| {
                (0..k)
                    .map(|t| {
                        let s: Complex64 = (0..r).map(|row| phis[i][row].conj() * e[row * k + t]).sum();
                        powers[i][t].conj() * s
                    })
                    .sum()
            })
            .collect()
    };
    let solve = |rhs: Vec<Complex64>| -> Result<Vec<Complex64>, HodmdError> {
        let rhs = ComplexDenseTensor::from_complex(vec![m, 1], &rhs)?;
        Ok(lstsq(&gram, &rhs)?.x.to_complex_vec())
    };
    let data: Vec<Complex64> = v.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut b = solve(project(&data))?;
    let mut resid = data;
    for j in 0..m {
        for row in 0..r {
            let c = b[j] * phis[j][row];
            for t in 0..k {
                resid[row * k + t] -= c * powers[j][t];
            }
        }
    }
    let db = solve(project(&resid))?;
    for (bj, d) in b.iter_mut().zip(db) {
        *bj += d;
    }
    Ok(b)
}

fn select_modes(mut modes: Vec<DmdMode>, cfg: &HodmdConfig) -> Vec<DmdMode> {
    if let Some((lo, hi)) = cfg.band_hz {
        modes.retain(|m| {
            let f = m.frequency_hz().abs();
            f >= lo && f <= hi
        });
    }
    // Amplitude descending; conjugate partners (equal up to rounding) are
    // kept adjacent with the positive frequency first.
    modes.sort_by(|x, y| {
        let (ax, ay) = (x.a, y.a);
        if (ax - ay).abs() <= 1e-9 * ax.max(ay) {
            y.omega.total_cmp(&x.omega)
        } else {
            ay.total_cmp(&ax)
        }
    });
    if let Some(a0) = modes.first().map(|m| m.a) {
        modes.retain(|m| m.a / a0 > cfg.eps_dmd);
    }
    modes
}

/// Real part of the modal expansion at each time; output dims are the mode dims plus a
/// trailing time axis. Times outside `[t1, t1 + T]` are allowed but logged.
pub fn reconstruct(spec: &DmdSpectrum, times: &[f64]) -> Result<DenseTensor<f64>, HodmdError> {
    let first = spec.modes.first().ok_or(HodmdError::EmptySpectrum)?;
    let span_end = spec.t1 + spec.timespan;
    let slack = 1e-9 * spec.dt_seconds;
    if times.iter().any(|&t| t < spec.t1 - slack || t > span_end + slack) {
        log::warn!("reconstruct: extrapolating outside [{}, {}]", spec.t1, span_end);
    }
    let mut dims = first.u.dims().to_vec();
    let np = first.u.len();
    let nt = times.len();
    let mut out = vec![0.0; np * nt];
    for mode in &spec.modes {
        if mode.u.dims() != first.u.dims() {
            return Err(ShapeError::Incompatible(dims, mode.u.dims().to_vec()).into());
        }
        let rate = Complex64::new(mode.delta, mode.omega);
        for (t, &time) in times.iter().enumerate() {
            let c = (rate * (time - spec.t1)).exp() * mode.a;
            for p in 0..np {
                // Re(c * u) = c.re u.re - c.im u.im
                out[p * nt + t] += c.re * mode.u.re()[p] - c.im * mode.u.im()[p];
            }
        }
    }
    dims.push(nt);
    Ok(DenseTensor::new(dims, out)?)
}

/// One HOSVD reduction + DMD-d pass: returns the pixel-space spectrum.
fn hodmd_pass(video: &DenseTensor<f64>, cfg: &HodmdConfig) -> Result<DmdSpectrum, HodmdError> {
    let (nx, ny, k) = (video.dims()[0], video.dims()[1], video.dims()[2]);
    let h = hosvd(video, cfg.eps_svd)?;
    // Spatial part P = core x1 U1 x2 U2, as [N_x N_y, r3]
    let p = mode_product(&mode_product(&h.core, 0, &h.factors[0])?, 1, &h.factors[1])?;
    let r3 = p.dims()[2];
    let p = p.reshape(vec![nx * ny, r3])?;
    // P = Up Sp Wp^T; reduced snapshots Sp Wp^T U3^T, isometric lift Up.
    let ps = svd(&p)?;
    let u3 = &h.factors[2];
    let q = ps.sigma.len();
    let mut reduced = vec![0.0; q * k];
    for c in 0..q {
        for t in 0..k {
            let mut s = 0.0;
            for j in 0..r3 {
                s += ps.v.at(j, c) * u3.at(t, j);
            }
            reduced[c * k + t] = ps.sigma[c] * s;
        }
    }
    let reduced = DenseTensor::matrix(q, k, reduced)?;
    let mut spec = dmd_d(&reduced, cfg)?;
    for mode in &mut spec.modes {
        let z = mode.u.to_complex_vec();
        let lifted: Vec<Complex64> = (0..nx * ny).map(|px| (0..q).map(|c| z[c] * ps.u.at(px, c)).sum()).collect();
        mode.u = ComplexDenseTensor::from_complex(vec![nx, ny], &lifted)?;
    }
    spec.retained_hosvd_ranks = h.retained_ranks;
    Ok(spec)
}

/// Iterative HODMD on a `[N_x, N_y, K]` sequence: HOSVD-reduce,
/// DMD-d, reconstruct, and repeat on the reconstruction until the retained
/// HOSVD ranks are unchanged or `max_outer_iters` passes have run.
pub fn hodmd_iterative(seq: &VideoSequence, cfg: &HodmdConfig) -> Result<HodmdResult, HodmdError> {
    let k = seq.num_frames();
    if k < cfg.min_snapshots {
        return Err(HodmdError::SequenceTooShort { k, min: cfg.min_snapshots });
    }
    let cfg = HodmdConfig { dt_seconds: seq.dt_seconds(), ..cfg.clone() };
    cfg.validate(k)?;
    if seq.frames().data().iter().all(|&v| v == 0.0) {
        return Err(HodmdError::ZeroInput);
    }
    let mut current = seq.frames().clone();
    let mut previous: Option<Vec<usize>> = None;
    let mut iteration = 0;
    loop {
        iteration += 1;
        let spec = hodmd_pass(&current, &cfg)?;
        if spec.is_empty() {
            return Err(HodmdError::EmptySpectrum);
        }
        let recon = reconstruct(&spec, &spec.snapshot_times(k))?;
        let converged = previous.as_deref() == Some(&spec.retained_hosvd_ranks[..]);
        log::debug!("hodmd {} pass {iteration}: ranks {:?}, {} modes", seq.id(), spec.retained_hosvd_ranks, spec.len());
        if converged || iteration >= cfg.max_outer_iters {
            return Ok(HodmdResult { spectrum: spec, reconstruction: recon, outer_iterations: iteration });
        }
        previous = Some(spec.retained_hosvd_ranks.clone());
        current = recon;
    }
}

/// Serializes a spectrum as an MDSP container.
pub fn encode_spectrum(spec: &DmdSpectrum) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SPECTRUM_MAGIC)
        .u64(spec.modes.len() as u64)
        .f64(spec.dt_seconds)
        .f64(spec.t1)
        .f64(spec.timespan)
        .u64(spec.retained_hosvd_ranks.len() as u64);
    for &r in &spec.retained_hosvd_ranks {
        w.u64(r as u64);
    }
    for m in &spec.modes {
        w.f64(m.a).f64(m.delta).f64(m.omega).f64(m.mu.re).f64(m.mu.im);
        crate::io::write_complex_block(&mut w, &m.u);
    }
    w.into_inner()
}

pub fn decode_spectrum(bytes: &[u8]) -> Result<DmdSpectrum, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(SPECTRUM_MAGIC)?;
    let count = r.usize()?;
    let (dt_seconds, t1, timespan) = (r.f64()?, r.f64()?, r.f64()?);
    let nranks = r.usize()?;
    if nranks > r.remaining() / 8 {
        return Err(FormatError::Invalid(format!("rank count {nranks} exceeds payload")));
    }
    let retained_hosvd_ranks = (0..nranks).map(|_| r.usize()).collect::<Result<_, _>>()?;
    // Each record is at least 40 bytes of scalars plus a header.
    if count > r.remaining() / 40 {
        return Err(FormatError::Invalid(format!("mode count {count} exceeds payload")));
    }
    let mut modes = Vec::with_capacity(count);
    for _ in 0..count {
        let (a, delta, omega, re, im) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let u = crate::io::read_complex_block(&mut r)?;
        modes.push(DmdMode { u, a, delta, omega, mu: Complex64::new(re, im) });
    }
    r.finish()?;
    Ok(DmdSpectrum { modes, dt_seconds, t1, timespan, retained_hosvd_ranks })
}

pub fn write_spectrum_file(path: impl AsRef<Path>, spec: &DmdSpectrum) -> Result<(), FormatError> {
    fs::write(path, encode_spectrum(spec))?;
    Ok(())
}

pub fn read_spectrum_file(path: impl AsRef<Path>) -> Result<DmdSpectrum, FormatError> {
    decode_spectrum(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{HeartState, SequenceAnnotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn cfg(d: usize) -> HodmdConfig {
        HodmdConfig { d, ..HodmdConfig::reference(250) }
    }

    fn signal(k: usize, dt: f64, f: impl Fn(f64) -> f64) -> DenseTensor<f64> {
        DenseTensor::matrix(1, k, (0..k).map(|i| f(i as f64 * dt)).collect()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn damped_oscillator_rates() {
        let x = signal(250, 0.004, |t| (-0.5 * t).exp() * (2.0 * PI * 5.0 * t).cos());
        let s = dmd_d(&x, &cfg(50)).unwrap();
        assert_eq!(s.len(), 2, "{:?}", s.modes.iter().map(|m| m.omega).collect::<Vec<_>>());
        for m in &s.modes {
            assert!(rel(m.omega.abs(), 2.0 * PI * 5.0) < 1e-6, "omega {}", m.omega);
            assert!(rel(m.delta, -0.5) < 1e-6, "delta {}", m.delta);
        }
        assert!(s.modes[0].omega > 0.0 && s.modes[1].omega < 0.0);
    }

    #[test]
    fn constant_signal_single_mode() {
        let x = signal(120, 0.004, |_| 3.0);
        let s = dmd_d(&x, &cfg(24)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.modes[0].omega.abs() < 1e-12 && s.modes[0].delta.abs() < 1e-9);
        let rec = reconstruct(&s, &s.snapshot_times(120)).unwrap();
        assert!(rec.data().iter().all(|v| (v - 3.0).abs() < 1e-10));
    }

    #[test]
    fn weak_tone_truncated() {
        let x = signal(250, 0.004, |t| (2.0 * PI * 5.0 * t).cos() + 1e-5 * (2.0 * PI * 17.0 * t).cos());
        let s = dmd_d(&x, &cfg(50)).unwrap();
        assert_eq!(s.len(), 2);
        assert!(rel(s.modes[0].omega, 2.0 * PI * 5.0) < 1e-6);
    }

    #[test]
    fn zero_input_empty_spectrum_and_errors() {
        let x = DenseTensor::zeros(vec![2, 60]).unwrap();
        assert!(dmd_d(&x, &cfg(10)).unwrap().is_empty());
        assert_eq!(dmd_d(&signal(11, 0.004, |t| t), &cfg(10)), Err(HodmdError::TooFewForDelay { k: 11, d: 10 }));
        assert_eq!(reconstruct(&empty_spectrum(0.004, 10), &[0.0]), Err(HodmdError::EmptySpectrum));
    }

    #[test]
    fn eigenvalue_rate_consistency_and_unit_modes() {
        let x = DenseTensor::from_fn(vec![3, 200], |i| {
            let (c, k) = (i / 200, (i % 200) as f64 * 0.004);
            (c as f64 + 1.0) * (2.0 * PI * 7.0 * k).sin() + (0.3 * k).exp() * (c as f64 - 1.0)
        })
        .unwrap();
        let s = dmd_d(&x, &cfg(40)).unwrap();
        assert!(!s.is_empty());
        for m in &s.modes {
            let back = (Complex64::new(m.delta, m.omega) * 0.004).exp();
            assert!((back - m.mu).norm() < 1e-10);
            assert!((m.u.frobenius_norm() - 1.0).abs() < 1e-10);
            assert!(m.omega > -PI / 0.004 && m.omega <= PI / 0.004);
        }
        for w in s.modes.windows(2) {
            assert!(w[0].a >= w[1].a * (1.0 - 1e-9));
        }
    }

    #[test]
    fn conjugate_pair_periodic_norm() {
        let omega = 2.0 * PI * 4.0;
        let u =
            ComplexDenseTensor::from_complex(vec![2], &[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]).unwrap();
        let conj = ComplexDenseTensor::new(vec![2], u.re().to_vec(), u.im().iter().map(|v| -v).collect()).unwrap();
        let mk = |u, om: f64| DmdMode { u, a: 1.0, delta: 0.0, omega: om, mu: Complex64::new(0.0, om * 0.004).exp() };
        let spec = DmdSpectrum {
            modes: vec![mk(u, omega), mk(conj, -omega)],
            dt_seconds: 0.004,
            t1: 0.0,
            timespan: 1.0,
            retained_hosvd_ranks: vec![],
        };
        let period = 2.0 * PI / omega;
        let times = [0.013, 0.013 + period, 0.2, 0.2 + period];
        let out = reconstruct(&spec, &times).unwrap();
        let norm = |t: usize| (out.at(0, t).powi(2) + out.at(1, t).powi(2)).sqrt();
        assert!((norm(0) - norm(1)).abs() < 1e-8);
        assert!((norm(2) - norm(3)).abs() < 1e-8);
        // closed form: 2*0.6 cos(w t), -2*0.8 sin(w t)
        assert!((out.at(0, 2) - 1.2 * (omega * 0.2).cos()).abs() < 1e-12);
        assert!((out.at(1, 2) + 1.6 * (omega * 0.2).sin()).abs() < 1e-12);
    }

    #[test]
    fn planted_linear_system_d1() {
        // x_{k+1} = A x_k with A = S diag(0.95, 0.8, rotation) S^-1
        let (c, s) = ((0.3f64).cos() * 0.9, (0.3f64).sin() * 0.9);
        let lam =
            DenseTensor::matrix(4, 4, vec![0.95, 0.0, 0.0, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 0.0, c, -s, 0.0, 0.0, s, c])
                .unwrap();
        let sm = DenseTensor::matrix(
            4,
            4,
            vec![1.0, 0.2, 0.0, 0.1, 0.0, 1.0, 0.3, 0.0, 0.1, 0.0, 1.0, 0.2, 0.0, 0.4, 0.0, 1.0],
        )
        .unwrap();
        let sinv = crate::linalg::lstsq_real(&sm, &DenseTensor::identity(4).unwrap()).unwrap().0;
        let a = sm.matmul(&lam).unwrap().matmul(&sinv).unwrap();
        let k = 40;
        let mut x = vec![vec![1.0, -0.5, 0.7, 0.3]];
        for _ in 1..k {
            let p = x.last().unwrap();
            x.push((0..4).map(|i| (0..4).map(|j| a.at(i, j) * p[j]).sum()).collect());
        }
        let v = DenseTensor::from_fn(vec![4, k], |i| x[i % k][i / k]).unwrap();
        let spec = dmd_d(&v, &HodmdConfig { d: 1, eps_svd: 1e-12, eps_dmd: 1e-12, ..cfg(1) }).unwrap();
        let mut want =
            vec![Complex64::new(0.95, 0.0), Complex64::new(0.8, 0.0), Complex64::new(c, s), Complex64::new(c, -s)];
        assert_eq!(spec.len(), 4);
        for m in &spec.modes {
            let (idx, _) = want
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (w - m.mu).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            assert!((want[idx] - m.mu).norm() < 1e-8, "{} vs {}", m.mu, want[idx]);
            want.remove(idx);
        }
    }

    pub(crate) fn two_tone(noise: f64) -> VideoSequence {
        let (nx, ny, k, dt) = (16, 16, 250, 0.004);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let frames = DenseTensor::from_fn(vec![nx, ny, k], |i| {
            let (x, y, t) = ((i / (ny * k)) as f64, ((i / k) % ny) as f64, (i % k) as f64 * dt);
            let p1 = (PI * (x + 0.5) / 16.0).sin() * (PI * (y + 0.5) / 16.0).sin();
            let p2 = (2.0 * PI * (x + 0.5) / 16.0).cos() * (PI * (y + 0.5) / 8.0).sin();
            let v = p1 * (-0.2 * t).exp() * (2.0 * PI * 3.0 * t).cos()
                + 0.5 * p2 * (-0.4 * t).exp() * (2.0 * PI * 11.0 * t + 0.3).cos();
            v + noise * normal.sample(&mut rng)
        })
        .unwrap();
        VideoSequence::new(frames, dt, SequenceAnnotation::new("tt", HeartState::Ctl, 1.0)).unwrap()
    }

    #[test]
    fn two_tone_video_noise_free() {
        let seq = two_tone(0.0);
        let r = hodmd_iterative(&seq, &HodmdConfig::reference(250)).unwrap();
        assert!(r.outer_iterations <= 10);
        assert_eq!(r.spectrum.len(), 4);
        let err = r.reconstruction.sub(seq.frames()).unwrap().frobenius_norm() / seq.frames().frobenius_norm();
        assert!(err <= 1e-6, "err {err}");
        let mut f: Vec<f64> = r.spectrum.modes.iter().map(|m| m.frequency_hz()).collect();
        f.sort_by(f64::total_cmp);
        for (got, want) in f.iter().zip([-11.0, -3.0, 3.0, 11.0]) {
            assert!(rel(*got, want) < 1e-6, "{got} vs {want}");
        }
        for m in &r.spectrum.modes {
            assert!((m.u.frobenius_norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn two_tone_video_noisy_frequencies() {
        let r = hodmd_iterative(&two_tone(0.01), &HodmdConfig::reference(250)).unwrap();
        assert!(r.outer_iterations <= 10);
        let mut f: Vec<f64> = r.spectrum.dominant(4).iter().map(|m| m.frequency_hz()).collect();
        f.sort_by(f64::total_cmp);
        for (got, want) in f.iter().zip([-11.0, -3.0, 3.0, 11.0]) {
            assert!(rel(*got, want) < 1e-2, "{got} vs {want}");
        }
    }

    #[test]
    fn too_short_sequence() {
        let frames = DenseTensor::filled(vec![4, 4, 99], 1.0).unwrap();
        let seq = VideoSequence::new(frames, 0.004, SequenceAnnotation::new("s", HeartState::Ob, 1.0)).unwrap();
        assert_eq!(
            hodmd_iterative(&seq, &HodmdConfig::reference(99)),
            Err(HodmdError::SequenceTooShort { k: 99, min: 100 })
        );
        let zero = seq.with_frames(DenseTensor::zeros(vec![4, 4, 120]).unwrap()).unwrap();
        assert_eq!(hodmd_iterative(&zero, &HodmdConfig::reference(120)), Err(HodmdError::ZeroInput));
    }

    #[test]
    fn spectrum_container_roundtrip() {
        let x = signal(250, 0.004, |t| (2.0 * PI * 5.0 * t).cos() + 0.5);
        let mut s = dmd_d(&x, &cfg(50)).unwrap();
        s.retained_hosvd_ranks = vec![3, 4, 5];
        let bytes = encode_spectrum(&s);
        assert_eq!(&bytes[..4], b"MDSP");
        assert_eq!(decode_spectrum(&bytes).unwrap(), s);
        assert!(decode_spectrum(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_spectrum(&bad), Err(FormatError::BadMagic { .. })));
    }
}
