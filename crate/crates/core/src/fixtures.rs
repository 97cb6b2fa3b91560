//! Synthetic multi-frequency video corpora used by the tests and the
//! `fixtures` subcommand.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_splits, DatasetError, SequenceMeta};
use crate::io::{write_tensor_file, FormatError, MANIFEST_HEADER};
use crate::rng::stream;
use crate::tensor::{DenseTensor, HeartState, Roi, SequenceAnnotation, VideoSequence};

const STATES: [HeartState; 3] = [HeartState::Ctl, HeartState::Ob, HeartState::Sh];

/// Two damped standing waves on a `16×16×250` grid sampled at 4 ms:
/// `p1·e^{−0.2t}·cos(2π·3t) + 0.5·p2·e^{−0.4t}·cos(2π·11t + 0.3)`, plus
/// Gaussian noise of standard deviation `noise`.
pub fn two_tone(id: &str, noise: f64, seed: u64) -> VideoSequence {
    two_tone_with(id, noise, seed, 3.0, 11.0, 250)
}

/// [`two_tone`] with custom frequencies and length.
pub fn two_tone_with(id: &str, noise: f64, seed: u64, f1: f64, f2: f64, k: usize) -> VideoSequence {
    let (nx, ny, dt) = (16, 16, 0.004);
    let mut rng = stream(seed, id, "noise");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let frames = DenseTensor::from_fn(vec![nx, ny, k], |i| {
        let (x, y, t) = ((i / (ny * k)) as f64, ((i / k) % ny) as f64, (i % k) as f64 * dt);
        let p1 = (PI * (x + 0.5) / 16.0).sin() * (PI * (y + 0.5) / 16.0).sin();
        let p2 = (2.0 * PI * (x + 0.5) / 16.0).cos() * (PI * (y + 0.5) / 8.0).sin();
        let v = p1 * (-0.2 * t).exp() * (2.0 * PI * f1 * t).cos()
            + 0.5 * p2 * (-0.4 * t).exp() * (2.0 * PI * f2 * t + 0.3).cos();
        if noise > 0.0 {
            v + noise * normal.sample(&mut rng)
        } else {
            v
        }
    })
    .expect("fixture dims");
    VideoSequence::new(frames, dt, SequenceAnnotation::new(id, HeartState::Ctl, 10.0 + f1)).expect("fixture sequence")
}

/// Three two-tone sequences with different dominant frequencies.
pub fn two_tone_preset(seed: u64) -> Vec<VideoSequence> {
    [(3.0, 11.0), (5.0, 13.0), (7.0, 17.0)]
        .iter()
        .enumerate()
        .map(|(i, &(f1, f2))| {
            let mut s = two_tone_with(&format!("tt{i}"), 0.01, seed, f1, f2, 250);
            s.annotation.heart_state = STATES[i % 3].clone();
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusConfig {
    pub n_sequences: usize,
    /// Square frame side in pixels.
    pub size: usize,
    /// Inclusive range of snapshot counts.
    pub k_range: [usize; 2],
    pub dt_seconds: f64,
    /// Dominant-frequency range in Hz.
    pub freq_range: [f64; 2],
    pub noise: f64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_sequences: 60,
            size: 24,
            k_range: [100, 130],
            dt_seconds: 0.004,
            freq_range: [3.0, 10.0],
            noise: 0.002,
        }
    }
}

/// Failure age (months) as a deterministic function of the dominant
/// frequency: 12 months at 3 Hz, 4 more per additional hertz.
pub fn toy_age(dominant_hz: f64) -> f64 {
    12.0 + 4.0 * (dominant_hz - 3.0)
}

/// One toy sequence and its dominant frequency. The video superposes three
/// ring patterns of wavelength `60/f` pixels around jittered centres: a
/// static background, the dominant damped standing wave at `f` and a weaker
/// fast nuisance wave, so every image kind carries the frequency. Wave
/// envelopes are non-negative (like intensity modulations), so mode
/// magnitudes keep the pattern's wavelength.
pub fn toy_sequence(index: usize, cfg: &ToyCorpusConfig, seed: u64) -> (VideoSequence, f64) {
    let id = format!("toy{index:03}");
    let mut rng = stream(seed, &id, "toy");
    let f = rng.gen_range(cfg.freq_range[0]..=cfg.freq_range[1]);
    let f2 = rng.gen_range(14.0..20.0);
    let decay = -rng.gen_range(0.0..0.3);
    let (ph1, ph2, ps1, ps2): (f64, f64, f64, f64) =
        (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..PI), rng.gen_range(0.0..PI));
    let k = rng.gen_range(cfg.k_range[0]..=cfg.k_range[1]);
    let n = cfg.size;
    let mid = (n as f64 - 1.0) / 2.0;
    let mut centre = || (mid + rng.gen_range(-3.0..3.0), mid + rng.gen_range(-3.0..3.0));
    let (c0, c1, c2) = (centre(), centre(), centre());
    let kf = 2.0 * PI * f / 60.0;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise_rng = stream(seed, &id, "noise");
    let frames = DenseTensor::from_fn(vec![n, n, k], |i| {
        let (x, y, t) = ((i / (n * k)) as f64, ((i / k) % n) as f64, (i % k) as f64 * cfg.dt_seconds);
        let r = |c: (f64, f64)| ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt();
        let b = 0.6 + 0.15 * (kf * r(c0)).cos();
        let a = 0.5 + 0.5 * (kf * r(c1) + ps1).cos();
        let cc = 0.5 + 0.5 * (kf * r(c2) + ps2).cos();
        let v = b
            + 0.3 * a * (decay * t).exp() * (2.0 * PI * f * t + ph1).cos()
            + 0.12 * cc * (2.0 * PI * f2 * t + ph2).cos();
        if cfg.noise > 0.0 {
            v + cfg.noise * normal.sample(&mut noise_rng)
        } else {
            v
        }
    })
    .expect("toy dims");
    let mut ann = SequenceAnnotation::new(id, STATES[index % 3].clone(), toy_age(f));
    ann.roi = Some(Roi { x: 0, y: 0, width: n, height: n });
    (VideoSequence::new(frames, cfg.dt_seconds, ann).expect("toy sequence"), f)
}

pub fn toy_corpus(cfg: &ToyCorpusConfig, seed: u64) -> Vec<VideoSequence> {
    (0..cfg.n_sequences).map(|i| toy_sequence(i, cfg, seed).0).collect()
}

/// Writes `{id}.mdt` per sequence and `manifest.csv` (full-frame ROI unless
/// the annotation has one; split hints from the seeded splitter when
/// `fractions` is given). Returns the manifest path.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    seqs: &[VideoSequence],
    fractions: Option<[f64; 3]>,
    seed: u64,
) -> Result<PathBuf, DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let hints = match fractions {
        Some(f) => {
            let metas: Vec<SequenceMeta> = seqs
                .iter()
                .map(|s| SequenceMeta {
                    id: s.id().to_string(),
                    heart_state: s.annotation.heart_state.clone(),
                    label_months: s.annotation.failure_age_months,
                })
                .collect();
            Some(assign_splits(&metas, f, seed)?)
        }
        None => None,
    };
    let mut csv = MANIFEST_HEADER.join(",");
    csv.push('\n');
    for s in seqs {
        let file = format!("{}.mdt", s.id());
        write_tensor_file(dir.join(&file), s.frames()).map_err(|e: FormatError| DatasetError::Format(e))?;
        let roi = s.annotation.roi.unwrap_or(Roi { x: 0, y: 0, width: s.nx(), height: s.ny() });
        let hint = hints.as_ref().map_or("", |h| h[s.id()].as_str());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            s.id(),
            file,
            s.annotation.heart_state.as_str(),
            s.annotation.failure_age_months,
            roi.x,
            roi.y,
            roi.width,
            roi.height,
            hint
        );
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, csv)?;
    Ok(path)
}
