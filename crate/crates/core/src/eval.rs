//! End-to-end inference (per-sequence test transform, per-image prediction,
//! fusion by averaging), the metric suite and the timing harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    decompose_sequence, images_for_kind, resize_bilinear, Component, DataKind, DatasetError, GenerationConfig,
};
use crate::hodmd::hodmd_iterative;
use crate::linalg::TruncationRule;
use crate::mae::{predict_image, MaeError, ModelConfig, ModelParams};
use crate::modal::{hosvd, svd_stage};
use crate::tensor::{DenseTensor, VideoSequence};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence {id}: too short for HODMD ({k} < {min} snapshots)")]
    SequenceTooShort { id: String, k: usize, min: usize },
    #[error("sequence {0}: the test transform produced no images")]
    NoImages(String),
    #[error("no predictions to evaluate")]
    Empty,
    #[error("unknown test kind {0:?}")]
    BadKind(String),
    #[error("corpus too small for benchmarking: {0} images (need at least 10)")]
    CorpusTooSmall(usize),
    #[error("predictions file: {0}")]
    Format(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mae(#[from] MaeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Test-time transform of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Original,
    Svd1Recon,
    Svd1Mode,
    HodmdRecon,
    HodmdModesAbs,
    HodmdModesReal,
    HodmdModesImag,
}

impl TestKind {
    /// The evaluated test kinds (HODMD modes as abs components).
    pub const STANDARD: [TestKind; 5] =
        [TestKind::Original, TestKind::Svd1Recon, TestKind::Svd1Mode, TestKind::HodmdRecon, TestKind::HodmdModesAbs];

    pub const ALL: [TestKind; 7] = [
        TestKind::Original,
        TestKind::Svd1Recon,
        TestKind::Svd1Mode,
        TestKind::HodmdRecon,
        TestKind::HodmdModesAbs,
        TestKind::HodmdModesReal,
        TestKind::HodmdModesImag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Original => "original",
            TestKind::Svd1Recon => "svd1_recon",
            TestKind::Svd1Mode => "svd1_mode",
            TestKind::HodmdRecon => "hodmd_recon",
            TestKind::HodmdModesAbs => "hodmd_modes_abs",
            TestKind::HodmdModesReal => "hodmd_modes_real",
            TestKind::HodmdModesImag => "hodmd_modes_imag",
        }
    }

    /// Accepts `-` or `_` separators, case-insensitively.
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|k| k.as_str() == norm).ok_or_else(|| EvalError::BadKind(s.to_string()))
    }

    pub fn data_kind(self) -> DataKind {
        match self {
            TestKind::Original => DataKind::Original,
            TestKind::Svd1Recon => DataKind::Svd1Recon,
            TestKind::Svd1Mode => DataKind::Svd1Mode,
            TestKind::HodmdRecon => DataKind::HodmdRecon,
            TestKind::HodmdModesAbs | TestKind::HodmdModesReal | TestKind::HodmdModesImag => DataKind::HodmdMode,
        }
    }

    fn component(self) -> Option<Component> {
        match self {
            TestKind::HodmdModesAbs => Some(Component::Abs),
            TestKind::HodmdModesReal => Some(Component::Real),
            TestKind::HodmdModesImag => Some(Component::Imag),
            _ => None,
        }
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Images of the test transform for one homogenized sequence, in the order
/// produced by the dataset pipeline.
pub fn test_images(
    seq: &VideoSequence,
    kind: TestKind,
    gcfg: &GenerationConfig,
) -> Result<Vec<DenseTensor<f64>>, EvalError> {
    let dk = kind.data_kind();
    if dk.needs_hodmd() && seq.num_frames() < gcfg.min_snapshots {
        return Err(EvalError::SequenceTooShort {
            id: seq.id().to_string(),
            k: seq.num_frames(),
            min: gcfg.min_snapshots,
        });
    }
    let products = decompose_sequence(seq, &[dk], gcfg)?;
    let imgs: Vec<DenseTensor<f64>> = images_for_kind(seq, &products, dk)
        .into_iter()
        .filter(|(_, c)| kind.component().is_none_or(|want| *c == want))
        .map(|(i, _)| i)
        .collect();
    if imgs.is_empty() {
        return Err(EvalError::NoImages(seq.id().to_string()));
    }
    Ok(imgs)
}

/// Arithmetic mean, summed in ascending order so the result does not depend
/// on the order of the inputs.
pub fn fuse(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePrediction {
    pub sequence_id: String,
    pub heart_state: String,
    pub test_kind: TestKind,
    pub per_image: Vec<f64>,
    pub fused: f64,
    pub truth: f64,
}

/// Per-image predictions (in parallel, order preserved) on an arbitrary
/// image list.
pub fn predict_images(
    params: &ModelParams,
    mcfg: &ModelConfig,
    images: &[DenseTensor<f64>],
) -> Result<Vec<f64>, EvalError> {
    let [h, w] = mcfg.img_size;
    images.par_iter().map(|img| Ok(predict_image(params, mcfg, &resize_bilinear(img, h, w))?)).collect()
}

/// Test transform, regression-only forward per image, fusion by the mean.
pub fn predict_sequence(
    params: &ModelParams,
    mcfg: &ModelConfig,
    seq: &VideoSequence,
    kind: TestKind,
    gcfg: &GenerationConfig,
) -> Result<SequencePrediction, EvalError> {
    let images = test_images(seq, kind, gcfg)?;
    let per_image = predict_images(params, mcfg, &images)?;
    Ok(SequencePrediction {
        sequence_id: seq.id().to_string(),
        heart_state: seq.annotation.heart_state.as_str().to_string(),
        test_kind: kind,
        fused: fuse(&per_image),
        per_image,
        truth: seq.annotation.failure_age_months,
    })
}

pub const PREDICTIONS_HEADER: [&str; 7] =
    ["sequence_id", "heart_state", "test_kind", "truth_months", "fused_months", "n_images", "per_image_months"];

/// Writes the predictions CSV; per-image values are `;`-separated and every
/// float uses the shortest round-trip representation.
pub fn write_predictions<W: Write>(out: W, preds: &[SequencePrediction]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTIONS_HEADER)?;
    for p in preds {
        let per: Vec<String> = p.per_image.iter().map(|v| v.to_string()).collect();
        w.write_record([
            p.sequence_id.as_str(),
            p.heart_state.as_str(),
            p.test_kind.as_str(),
            &p.truth.to_string(),
            &p.fused.to_string(),
            &p.per_image.len().to_string(),
            &per.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<SequencePrediction>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(EvalError::Format(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| EvalError::Format(format!("bad {what} value {s:?}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let per_image: Vec<f64> = if rec[6].is_empty() {
            Vec::new()
        } else {
            rec[6].split(';').map(|s| num(s, "per_image_months")).collect::<Result<_, _>>()?
        };
        let n: usize = rec[5].parse().map_err(|_| EvalError::Format(format!("bad n_images {:?}", &rec[5])))?;
        if n != per_image.len() {
            return Err(EvalError::Format(format!("row {}: n_images {n} but {} values", &rec[0], per_image.len())));
        }
        out.push(SequencePrediction {
            sequence_id: rec[0].to_string(),
            heart_state: rec[1].to_string(),
            test_kind: TestKind::parse(&rec[2])?,
            truth: num(&rec[3], "truth_months")?,
            fused: num(&rec[4], "fused_months")?,
            per_image,
        });
    }
    Ok(out)
}

/// Statistics of one group of sequences (Eqs. 4–5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub heart_state: String,
    /// Mean of the fused predictions.
    pub mu: f64,
    /// Population standard deviation of the fused predictions.
    pub sigma: f64,
    /// Mean of the signed errors `P̂_j − T_j`.
    pub mean_error: f64,
    pub sigma_error: f64,
    /// Error margin (RMSE over sequences).
    pub rmse: f64,
    /// Largest signed error.
    pub max_error: f64,
    /// Smallest signed error.
    pub min_error: f64,
    /// Smallest absolute error.
    pub min_abs_error: f64,
    pub n_sequences: usize,
    pub n_images: usize,
}

/// Per-image timings in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBlock {
    pub t_svd_ms: f64,
    pub t_hosvd_ms: f64,
    pub t_hodmd_ms: f64,
    pub t_pred_ms: f64,
    /// `1000 / t_pred_ms` images per second.
    pub throughput_fps: f64,
    pub warmup_images: usize,
    pub measured_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub test_kind: Option<TestKind>,
    /// Sorted by heart state.
    pub per_state: Vec<GroupMetrics>,
    pub total: GroupMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<TimingBlock>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

fn group(state: &str, preds: &[&SequencePrediction]) -> GroupMetrics {
    let fused: Vec<f64> = preds.iter().map(|p| p.fused).collect();
    let err: Vec<f64> = preds.iter().map(|p| p.fused - p.truth).collect();
    let (mu, sigma) = mean_std(&fused);
    let (mean_error, sigma_error) = mean_std(&err);
    let rmse = (err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64).sqrt();
    GroupMetrics {
        heart_state: state.to_string(),
        mu,
        sigma,
        mean_error,
        sigma_error,
        rmse,
        max_error: err.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_error: err.iter().copied().fold(f64::INFINITY, f64::min),
        min_abs_error: err.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min),
        n_sequences: preds.len(),
        n_images: preds.iter().map(|p| p.per_image.len()).sum(),
    }
}

/// Per-state and total metrics. Sequences are ordered by id first, so the
/// report does not depend on the input order.
pub fn evaluate(preds: &[SequencePrediction]) -> Result<MetricsReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted: Vec<&SequencePrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.sequence_id, a.test_kind, &a.heart_state)
            .cmp(&(&b.sequence_id, b.test_kind, &b.heart_state))
            .then(a.fused.total_cmp(&b.fused))
    });
    let mut by_state: BTreeMap<&str, Vec<&SequencePrediction>> = BTreeMap::new();
    for p in &sorted {
        by_state.entry(p.heart_state.as_str()).or_default().push(p);
    }
    let kinds: std::collections::BTreeSet<TestKind> = preds.iter().map(|p| p.test_kind).collect();
    Ok(MetricsReport {
        test_kind: if kinds.len() == 1 { kinds.into_iter().next() } else { None },
        per_state: by_state.iter().map(|(s, v)| group(s, v)).collect(),
        total: group("Total", &sorted),
        timing: None,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned plain-text table, one row per heart state plus a total.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(k) = self.test_kind {
            let _ = writeln!(s, "test kind: {k}");
        }
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>8} {:>18} {:>14} {:>16} {:>16} {:>17}",
            "State",
            "Seqs",
            "Images",
            "Predicted age",
            "Error margin",
            "Max error (w/)",
            "Min error (w/)",
            "Min error (w/o)"
        );
        for g in self.per_state.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>8} {:>18} {:>14.2} {:>16.2} {:>16.2} {:>17.2}",
                g.heart_state,
                g.n_sequences,
                g.n_images,
                format!("{:.2} ± {:.2}", g.mu, g.sigma),
                g.rmse,
                g.max_error,
                g.min_error,
                g.min_abs_error
            );
        }
        if let Some(t) = &self.timing {
            let _ = writeln!(
                s,
                "timing per image (ms): svd {:.3}  hosvd {:.3}  hodmd {:.3}  pred {:.3}  throughput {:.1} fps",
                t.t_svd_ms, t.t_hosvd_ms, t.t_hodmd_ms, t.t_pred_ms, t.throughput_fps
            );
        }
        s
    }
}

pub const BENCH_WARMUP_IMAGES: usize = 10;
pub const BENCH_MIN_IMAGES: usize = 100;

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Timing harness: per-image wall-clock averages of the SVD stage, a
/// standalone HOSVD of the SVD reconstruction, the full iterative HODMD and
/// the regression-only prediction. Sequences (and images) are cycled until at
/// least [`BENCH_MIN_IMAGES`] images have been measured after
/// [`BENCH_WARMUP_IMAGES`] warm-up images. Runs on the calling thread.
pub fn bench(
    params: &ModelParams,
    mcfg: &ModelConfig,
    sequences: &[VideoSequence],
    gcfg: &GenerationConfig,
) -> Result<TimingBlock, EvalError> {
    let total: usize = sequences.iter().map(|s| s.num_frames()).sum();
    if total < BENCH_WARMUP_IMAGES {
        return Err(EvalError::CorpusTooSmall(total));
    }
    let [h, w] = mcfg.img_size;
    let frames: Vec<DenseTensor<f64>> = sequences
        .iter()
        .flat_map(|s| (0..s.num_frames()).map(move |k| s.frame(k)))
        .map(|f| resize_bilinear(&f, h, w))
        .collect();

    // warm-up
    for f in frames.iter().cycle().take(BENCH_WARMUP_IMAGES) {
        predict_image(params, mcfg, f)?;
    }
    let rank = TruncationRule::Rank(gcfg.svd_rank);
    let warm = &sequences[0];
    let _ = svd_stage(warm, rank).map_err(DatasetError::from)?;

    let t = Instant::now();
    let mut n_pred = 0;
    for f in frames.iter().cycle().take(BENCH_MIN_IMAGES.max(frames.len().min(4 * BENCH_MIN_IMAGES))) {
        predict_image(params, mcfg, f)?;
        n_pred += 1;
    }
    let t_pred = elapsed_ms(t) / n_pred as f64;

    let (mut t_svd, mut t_hosvd, mut t_hodmd) = (0.0, 0.0, 0.0);
    let (mut n_dec, mut n_hodmd) = (0usize, 0usize);
    let mut idx = 0;
    while n_dec < BENCH_MIN_IMAGES {
        let seq = &sequences[idx % sequences.len()];
        idx += 1;
        let k = seq.num_frames();
        let t = Instant::now();
        let svd1 = svd_stage(seq, rank).map_err(DatasetError::from)?;
        t_svd += elapsed_ms(t);
        n_dec += k;
        if k >= gcfg.min_snapshots {
            let recon = seq.with_frames(svd1.reconstructions).map_err(DatasetError::from)?;
            let t = Instant::now();
            let _ = hosvd(recon.frames(), gcfg.eps_svd).map_err(DatasetError::from)?;
            t_hosvd += elapsed_ms(t);
            let hcfg = gcfg.hodmd_config(k, recon.dt_seconds());
            let t = Instant::now();
            let _ = hodmd_iterative(&recon, &hcfg).map_err(DatasetError::from)?;
            t_hodmd += elapsed_ms(t);
            n_hodmd += k;
        }
    }
    let per = |t: f64, n: usize| if n > 0 { t / n as f64 } else { f64::NAN };
    Ok(TimingBlock {
        t_svd_ms: per(t_svd, n_dec),
        t_hosvd_ms: per(t_hosvd, n_hodmd),
        t_hodmd_ms: per(t_hodmd, n_hodmd),
        t_pred_ms: t_pred,
        throughput_fps: 1000.0 / t_pred,
        warmup_images: BENCH_WARMUP_IMAGES,
        measured_images: n_pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(id: &str, state: &str, per: &[f64], truth: f64) -> SequencePrediction {
        SequencePrediction {
            sequence_id: id.into(),
            heart_state: state.into(),
            test_kind: TestKind::HodmdModesAbs,
            per_image: per.to_vec(),
            fused: fuse(per),
            truth,
        }
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse(&[20.0, 22.0, 24.0]), 22.0);
        assert_eq!(fuse(&[13.7]), 13.7);
        assert_eq!(fuse(&[24.0, 20.0, 22.0]), fuse(&[20.0, 22.0, 24.0]));
    }

    #[test]
    fn worked_example() {
        let r = evaluate(&[pred("a", "OB", &[25.0], 27.0), pred("b", "OB", &[20.0], 18.0)]).unwrap();
        let t = &r.total;
        assert_eq!(t.rmse, 2.0);
        assert_eq!(t.max_error, 2.0);
        assert_eq!(t.min_error, -2.0);
        assert_eq!(t.min_abs_error, 2.0);
        assert_eq!(t.mu, 22.5);
        assert!(r.to_json().unwrap().contains("\"rmse\": 2.0"));
    }

    #[test]
    fn perfect_predictions_and_single_sequence() {
        let r = evaluate(&[pred("a", "CTL", &[10.0, 10.0], 10.0), pred("b", "CTL", &[30.0], 30.0)]).unwrap();
        assert_eq!((r.total.rmse, r.total.sigma_error), (0.0, 0.0));
        let r = evaluate(&[pred("c", "CTL", &[21.54], 27.83)]).unwrap();
        assert!((r.per_state[0].min_error - -6.29).abs() < 1e-12);
        assert!(matches!(evaluate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn per_state_counts_sum_to_total() {
        let preds = vec![
            pred("a", "CTL", &[1.0, 2.0], 2.0),
            pred("b", "OB", &[5.0], 4.0),
            pred("c", "SH", &[7.0, 8.0, 9.0], 9.5),
            pred("d", "OB", &[3.0], 3.5),
        ];
        let r = evaluate(&preds).unwrap();
        assert_eq!(r.per_state.iter().map(|g| g.n_sequences).sum::<usize>(), r.total.n_sequences);
        assert_eq!(r.per_state.iter().map(|g| g.n_images).sum::<usize>(), r.total.n_images);
        assert_eq!(r.per_state.iter().map(|g| g.heart_state.as_str()).collect::<Vec<_>>(), ["CTL", "OB", "SH"]);
        let text = r.to_text();
        assert!(text.contains("Error margin") && text.contains("Total"));
    }

    #[test]
    fn predictions_csv_roundtrip() {
        let preds = vec![pred("s,1", "CTL", &[0.1, 1.0 / 3.0], 27.83), pred("s2", "Other\"x", &[], 1.0)];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sequence_id,heart_state,test_kind,"));
        assert!(text.contains(",hodmd_modes_abs,"));
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back[0], preds[0]);
        assert_eq!(back[1].per_image, Vec::<f64>::new());
    }

    #[test]
    fn test_kind_names() {
        assert_eq!(TestKind::parse("hodmd-modes-abs").unwrap(), TestKind::HodmdModesAbs);
        assert_eq!(TestKind::HodmdModesAbs.as_str(), "hodmd_modes_abs");
        assert!(TestKind::parse("modes").is_err());
        for k in TestKind::ALL {
            assert_eq!(TestKind::parse(k.as_str()).unwrap(), k);
        }
    }

    fn arb_preds() -> impl Strategy<Value = Vec<SequencePrediction>> {
        prop::collection::vec((0usize..3, prop::collection::vec(0.0f64..60.0, 1..5), 0.0f64..60.0), 1..12).prop_map(
            |v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (s, per, t))| pred(&format!("s{i}"), ["CTL", "OB", "SH"][s], &per, t))
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn evaluate_is_order_invariant_and_jensen(preds in arb_preds(), seed in any::<u64>()) {
            let r = evaluate(&preds).unwrap();
            let mut shuffled = preds.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::rng::stream(seed, "eval", "perm"));
            prop_assert_eq!(&evaluate(&shuffled).unwrap(), &r);
            for g in r.per_state.iter().chain(std::iter::once(&r.total)) {
                prop_assert!(g.rmse + 1e-12 >= g.mean_error.abs());
                prop_assert!(g.min_error <= g.max_error);
            }
        }

        #[test]
        fn fusion_is_linear_and_permutation_invariant(v in prop::collection::vec(-100.0f64..100.0, 1..20), c in 0.5f64..4.0, seed in any::<u64>()) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((fuse(&scaled) - c * fuse(&v)).abs() <= 1e-12 * (1.0 + fuse(&scaled).abs()));
            let mut p = v.clone();
            use rand::seq::SliceRandom;
            p.shuffle(&mut crate::rng::stream(seed, "fuse", "perm"));
            prop_assert_eq!(fuse(&p), fuse(&v));
        }
    }
}
