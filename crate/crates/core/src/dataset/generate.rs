//! Modal decomposition based data generation: per sequence,
//! SVD reconstructions and modes, HODMD (on the SVD reconstructions)
//! reconstructions and modes, and the SVD of the HODMD modes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AugmentPolicy, Component, DataKind, DatasetError, SampleRecord, TrainingCase};
use crate::hodmd::{hodmd_iterative, HodmdConfig, HodmdError, HodmdResult};
use crate::linalg::TruncationRule;
use crate::modal::{svd_of_modes, svd_stage, SvdStageOutput};
use crate::tensor::{ComplexDenseTensor, DenseTensor, VideoSequence};

/// Dataset generation settings (the JSON generation config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Training case id, 1..=14.
    pub case: u8,
    /// Rank of the stage-1 SVD and of the SVD of HODMD modes.
    pub svd_rank: usize,
    pub eps_svd: f64,
    pub eps_dmd: f64,
    /// Delay rule `d = floor(K / d_divisor)`.
    pub d_divisor: usize,
    pub min_snapshots: usize,
    pub max_outer_iters: usize,
    pub band_hz: Option<(f64, f64)>,
    /// Frame interval of the input videos (neither the manifest nor the
    /// MDT container records it); 4 ms by default.
    pub dt_seconds: f64,
    pub fractions: [f64; 3],
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            case: 1,
            svd_rank: 5,
            eps_svd: 5e-4,
            eps_dmd: 5e-4,
            d_divisor: 5,
            min_snapshots: 100,
            max_outer_iters: 10,
            band_hz: None,
            dt_seconds: 0.004,
            fractions: [0.6, 0.2, 0.2],
            augment: AugmentPolicy::default(),
            seed: 42,
        }
    }
}

impl GenerationConfig {
    pub fn hodmd_config(&self, k: usize, dt: f64) -> HodmdConfig {
        HodmdConfig {
            d: (k / self.d_divisor.max(1)).max(1),
            eps_svd: self.eps_svd,
            eps_dmd: self.eps_dmd,
            dt_seconds: dt,
            min_snapshots: self.min_snapshots,
            max_outer_iters: self.max_outer_iters,
            band_hz: self.band_hz,
        }
    }

    pub fn training_case(&self) -> Result<TrainingCase, DatasetError> {
        TrainingCase::new(self.case)
    }
}

/// Decomposition outputs of one sequence; stages not needed are `None`.
#[derive(Debug, Clone)]
pub struct SequenceProducts {
    pub svd1: Option<SvdStageOutput>,
    /// `None` also when the sequence is below `min_snapshots`.
    pub hodmd: Option<HodmdResult>,
    pub svd2: Option<SvdStageOutput>,
}

/// Runs the stages the requested kinds depend on. Sequences too short for
/// HODMD yield `hodmd = None` with a warning.
pub fn decompose_sequence(
    seq: &VideoSequence,
    kinds: &[DataKind],
    cfg: &GenerationConfig,
) -> Result<SequenceProducts, DatasetError> {
    let rank = TruncationRule::Rank(cfg.svd_rank);
    let need_hodmd = kinds.iter().any(|k| k.needs_hodmd());
    let need_svd1 = need_hodmd || kinds.iter().any(|k| matches!(k, DataKind::Svd1Recon | DataKind::Svd1Mode));
    let svd1 = if need_svd1 { Some(svd_stage(seq, rank)?) } else { None };
    let mut hodmd = None;
    if need_hodmd {
        let recon = seq.with_frames(svd1.as_ref().expect("svd1 computed").reconstructions.clone())?;
        let hcfg = cfg.hodmd_config(seq.num_frames(), seq.dt_seconds());
        match hodmd_iterative(&recon, &hcfg) {
            Ok(r) => hodmd = Some(r),
            Err(HodmdError::SequenceTooShort { k, min }) => {
                log::warn!("sequence {}: too short for HODMD ({k} < {min} snapshots), skipping HODMD kinds", seq.id());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let svd2 = match (&hodmd, kinds.contains(&DataKind::Svd2Recon)) {
        (Some(h), true) => {
            let modes: Vec<ComplexDenseTensor<f64>> = h.spectrum.modes.iter().map(|m| m.u.clone()).collect();
            Some(svd_of_modes(&modes, rank)?)
        }
        _ => None,
    };
    Ok(SequenceProducts { svd1, hodmd, svd2 })
}

/// The abs/real/imag planes of a complex mode, each min-max scaled to
/// `[0, 1]`; `constant[i]` flags a zero-range plane (emitted as zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedMode {
    pub planes: [(DenseTensor<f64>, Component); 3],
    pub constant: [bool; 3],
}

/// Min-max scaling to `[0, 1]`; zero-range (up to rounding) images map to zeros.
fn min_max_scale(img: &DenseTensor<f64>) -> (DenseTensor<f64>, bool) {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if !(range > 1e-12 * lo.abs().max(hi.abs())) {
        return (img.map(|_| 0.0), true);
    }
    (img.map(|v| ((v - lo) / range).clamp(0.0, 1.0)), false)
}

pub fn expand_complex(mode: &ComplexDenseTensor<f64>) -> ExpandedMode {
    let (abs, c0) = min_max_scale(&mode.abs());
    let (re, c1) = min_max_scale(&mode.real_part());
    let (im, c2) = min_max_scale(&mode.imag_part());
    ExpandedMode {
        planes: [(abs, Component::Abs), (re, Component::Real), (im, Component::Imag)],
        constant: [c0, c1, c2],
    }
}

/// Splits a `[N_x, N_y, K]` video into frames scaled by the original
/// sequence's intensity range.
fn scaled_frames(video: &DenseTensor<f64>, lo: f64, hi: f64) -> Vec<DenseTensor<f64>> {
    let (nx, ny, k) = (video.dims()[0], video.dims()[1], video.dims()[2]);
    let range = hi - lo;
    (0..k)
        .map(|t| {
            DenseTensor::from_fn(vec![nx, ny], |p| {
                if range > 0.0 {
                    ((video.data()[p * k + t] - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .expect("frame dims")
        })
        .collect()
}

/// Images of one kind for a decomposed sequence, in a fixed order. HODMD
/// kinds are empty when HODMD was skipped.
pub fn images_for_kind(
    seq: &VideoSequence,
    products: &SequenceProducts,
    kind: DataKind,
) -> Vec<(DenseTensor<f64>, Component)> {
    let (lo, hi) = seq.frames().min_max();
    let plain = |imgs: Vec<DenseTensor<f64>>| imgs.into_iter().map(|i| (i, Component::NotComplex)).collect();
    match kind {
        DataKind::Original => plain(scaled_frames(seq.frames(), lo, hi)),
        DataKind::Svd1Recon => {
            plain(products.svd1.as_ref().map_or_else(Vec::new, |s| scaled_frames(&s.reconstructions, lo, hi)))
        }
        DataKind::Svd1Mode => plain(
            products.svd1.as_ref().map_or_else(Vec::new, |s| s.modes.iter().map(|m| min_max_scale(m).0).collect()),
        ),
        DataKind::HodmdRecon => {
            plain(products.hodmd.as_ref().map_or_else(Vec::new, |h| scaled_frames(&h.reconstruction, lo, hi)))
        }
        DataKind::HodmdMode => products.hodmd.as_ref().map_or_else(Vec::new, |h| {
            h.spectrum
                .modes
                .iter()
                .flat_map(|m| {
                    let e = expand_complex(&m.u);
                    if e.constant.iter().any(|&c| c) {
                        log::debug!("sequence {}: constant mode plane flagged {:?}", seq.id(), e.constant);
                    }
                    e.planes
                })
                .collect()
        }),
        DataKind::Svd2Recon => products.svd2.as_ref().map_or_else(Vec::new, |s| {
            let comps = [Component::Abs, Component::Real, Component::Imag];
            let (nx, ny, n) = (s.reconstructions.dims()[0], s.reconstructions.dims()[1], s.reconstructions.dims()[2]);
            (0..n)
                .map(|t| {
                    let img = DenseTensor::from_fn(vec![nx, ny], |p| s.reconstructions.data()[p * n + t])
                        .expect("frame dims");
                    (min_max_scale(&img).0, comps[t % 3])
                })
                .collect()
        }),
    }
}

/// All sample records of the given kinds for one sequence.
pub fn generate_sequence(
    seq: &VideoSequence,
    kinds: &[DataKind],
    cfg: &GenerationConfig,
) -> Result<Vec<SampleRecord>, DatasetError> {
    let products = decompose_sequence(seq, kinds, cfg)?;
    let mut out = Vec::new();
    for &kind in kinds {
        for (index, (image, component)) in images_for_kind(seq, &products, kind).into_iter().enumerate() {
            out.push(SampleRecord {
                image,
                label_months: seq.annotation.failure_age_months,
                kind,
                component,
                sequence_id: seq.id().to_string(),
                heart_state: seq.annotation.heart_state.clone(),
                index,
            });
        }
    }
    Ok(out)
}

/// Records of a training case over homogenized sequences, in sequence order.
/// Sequences are processed in parallel; output does not depend on threading.
pub fn generate_case(
    sequences: &[VideoSequence],
    case: &TrainingCase,
    cfg: &GenerationConfig,
) -> Result<Vec<SampleRecord>, DatasetError> {
    let per_seq: Vec<Vec<SampleRecord>> =
        sequences.par_iter().map(|s| generate_sequence(s, &case.kinds, cfg)).collect::<Result<_, _>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}
