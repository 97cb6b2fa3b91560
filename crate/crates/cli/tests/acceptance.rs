//! Acceptance suite: one PASS/FAIL line per primary criterion, each with its
//! runtime budget. Values come from independent oracles built here (planted
//! singular values, planted linear dynamics, hand-evaluated optimizer
//! updates) or from the published tables; CLI criteria drive the `mdk`
//! binary end to end.

// `ensure!` negates its condition on purpose: a NaN comparison must fail
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdk_core::dataset::{generate_case, homogenize_sequence, DatasetSplit, GenerationConfig, TrainingCase};
use mdk_core::eval::{read_predictions, TestKind};
use mdk_core::fixtures::{toy_corpus, two_tone, ToyCorpusConfig};
use mdk_core::hodmd::{dmd_d, hodmd_iterative, HodmdConfig};
use mdk_core::linalg::{svd, truncate, TruncationRule};
use mdk_core::mae::{
    adamw_step, backward, forward_with_target, lr_at, patchify, random_mask, read_checkpoint, train, unpatchify,
    AdamWConfig, BatchItem, ForwardMode, ModelConfig, ModelParams, OptimState, ScheduleConfig, TrainConfig,
};
use mdk_core::rng::stream;
use mdk_core::Tensor;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- helpers

fn mdk(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mdk"));
    cmd.args(args).env_remove("MDK_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("mdk runs")
}

/// Runs `mdk` and requires exit code 0; returns stdout.
fn mdk_ok(args: &[&str], envs: &[(&str, &str)]) -> Result<String, String> {
    let out = mdk(args, envs);
    if out.status.code() != Some(0) {
        return Err(format!(
            "mdk {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|i| f(i / cols, i % cols)).collect()).unwrap()
}

/// `n` orthonormal columns of length `m` (modified Gram-Schmidt, twice).
fn random_orthonormal(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    cols
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ------------------------------------------------------------- criteria

/// Training-set sizes of cases 1..14 for the reference corpus.
const CASE_TOTALS: [usize; 14] =
    [27293, 27293, 55056, 54586, 27763, 27293, 38273, 54586, 81879, 49253, 66036, 77016, 93329, 104309];

fn c1_case_totals() -> Outcome {
    let stdout = mdk_ok(&["dataset", "--dry-run"], &[])?;
    let mut lines = stdout.lines();
    ensure!(lines.next() == Some("case,kinds,train,val,test"), "unexpected header in {stdout}");
    let got: Vec<usize> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    ensure!(got == CASE_TOTALS, "dry-run totals {got:?} != expected {CASE_TOTALS:?}");
    Ok("14/14 case totals exact".into())
}

fn c2_svd_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (m, n) = (rng.gen_range(1..=40), rng.gen_range(1..=40));
        let p = m.min(n);
        // planted spectrum: A = Q1 diag(sigma) Q2^T with log-uniform sigma
        let mut sigma: Vec<f64> = (0..p).map(|_| 10f64.powf(rng.gen_range(-3.0..1.0))).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        let q1 = random_orthonormal(m, p, &mut rng);
        let q2 = random_orthonormal(n, p, &mut rng);
        let a = matrix(m, n, |i, j| (0..p).map(|k| q1[k][i] * sigma[k] * q2[k][j]).sum());
        let f = svd(&a).map_err(|e| format!("trial {trial}: {e}"))?;
        for (k, &want) in sigma.iter().enumerate() {
            let got = f.sigma.get(k).copied().unwrap_or(0.0);
            ensure!((got - want).abs() <= 1e-9 * sigma[0], "trial {trial}: sigma[{k}] {got} vs planted {want}");
        }
        let norm = a.frobenius_norm();
        for r in 1..=p {
            let t = truncate(&f, TruncationRule::Rank(r)).map_err(|e| e.to_string())?;
            let err = a.sub(&t.reconstruct()).unwrap().frobenius_norm();
            let tail = sigma[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
            let dev = (err - tail).abs() / tail.max(norm);
            worst = worst.max(dev);
            ensure!(dev <= 1e-9, "trial {trial} ({m}x{n}) rank {r}: |A - A_r| = {err:e}, tail = {tail:e}");
        }
    }
    Ok(format!("100 matrices, worst relative deviation {worst:.1e}"))
}

fn c3_hodmd_two_tone() -> Outcome {
    let want_f = [-11.0, -3.0, 3.0, 11.0];
    let growth = |f: f64| if f.abs() < 5.0 { -0.2 } else { -0.4 };

    let clean = two_tone("tt", 0.0, 1);
    let cfg = HodmdConfig::reference(250);
    ensure!(cfg.d == 50 && cfg.eps_dmd == 5e-4 && cfg.dt_seconds == 0.004, "reference settings {cfg:?}");
    let r = hodmd_iterative(&clean, &cfg).map_err(|e| e.to_string())?;
    ensure!(r.spectrum.len() == 4, "noise-free: {} modes retained, expected 4", r.spectrum.len());
    let mut modes: Vec<_> = r.spectrum.modes.iter().collect();
    modes.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    let mut worst: f64 = 0.0;
    for (m, f) in modes.iter().zip(want_f) {
        let (ef, ed) = (rel(m.frequency_hz(), f), rel(m.delta, growth(f)));
        worst = worst.max(ef).max(ed);
        ensure!(ef <= 1e-6 && ed <= 1e-6, "mode f={} delta={} vs ({f}, {})", m.frequency_hz(), m.delta, growth(f));
    }
    let recon = r.reconstruction.sub(clean.frames()).unwrap().frobenius_norm() / clean.frames().frobenius_norm();
    ensure!(recon <= 1e-6, "noise-free reconstruction error {recon:e}");

    let noisy = two_tone("tt", 0.01, 1);
    let r = hodmd_iterative(&noisy, &cfg).map_err(|e| e.to_string())?;
    let mut f: Vec<f64> = r.spectrum.dominant(4).iter().map(|m| m.frequency_hz()).collect();
    f.sort_by(f64::total_cmp);
    let mut worst_noisy: f64 = 0.0;
    for (got, want) in f.iter().zip(want_f) {
        worst_noisy = worst_noisy.max(rel(*got, want));
        ensure!(rel(*got, want) <= 1e-2, "noisy dominant frequency {got} vs {want}");
    }
    Ok(format!("clean rel err {worst:.1e}, recon {recon:.1e}; noisy rel err {worst_noisy:.1e}"))
}

fn c4_dmd_oracle() -> Outcome {
    // planted eigenvalues of x_{k+1} = A x_k, A = S Λ S^{-1}; snapshots are
    // generated in modal coordinates (z_{k+1} = Λ z_k, x_k = S z_k), so the
    // oracle never forms A
    let planted = [
        Complex64::new(0.97, 0.0),
        Complex64::new(0.85, 0.0),
        Complex64::from_polar(0.9, 0.4),
        Complex64::from_polar(0.9, -0.4),
        Complex64::from_polar(0.75, 1.1),
        Complex64::from_polar(0.75, -1.1),
    ];
    let n = planted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // real Λ: scalars and 2x2 rotation-scaling blocks
    let lam = |z: &[f64]| -> Vec<f64> {
        let mut o = vec![z[0] * 0.97, z[1] * 0.85, 0.0, 0.0, 0.0, 0.0];
        for (b, mu) in [(2, planted[2]), (4, planted[4])] {
            o[b] = mu.re * z[b] - mu.im * z[b + 1];
            o[b + 1] = mu.im * z[b] + mu.re * z[b + 1];
        }
        o
    };
    let sm: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3)).collect()).collect();
    let k = 60;
    let mut z: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
    let mut xs = Vec::with_capacity(k);
    for _ in 0..k {
        xs.push((0..n).map(|i| (0..n).map(|j| sm[i][j] * z[j]).sum::<f64>()).collect::<Vec<f64>>());
        z = lam(&z);
    }
    let v = matrix(n, k, |i, t| xs[t][i]);
    let cfg = HodmdConfig { d: 1, eps_svd: 1e-12, eps_dmd: 1e-12, ..HodmdConfig::reference(k) };
    let spec = dmd_d(&v, &cfg).map_err(|e| e.to_string())?;
    ensure!(spec.len() == n, "{} modes, expected {n}", spec.len());
    let mut left: Vec<Complex64> = planted.to_vec();
    let mut worst: f64 = 0.0;
    for m in &spec.modes {
        let (i, d) =
            left.iter().enumerate().map(|(i, w)| (i, (w - m.mu).norm())).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        ensure!(d <= 1e-8, "eigenvalue {} off planted {} by {d:e}", m.mu, left[i]);
        worst = worst.max(d);
        left.remove(i);
    }
    Ok(format!("6 planted eigenvalues, worst |mu - mu*| {worst:.1e}"))
}

/// Tiny-config gradient fixture: two random images with labels and masks,
/// parameters jittered so zero-initialized entries are exercised.
struct GradFixture {
    cfg: ModelConfig,
    params: ModelParams,
    images: Vec<Tensor>,
    labels: Vec<f64>,
    masks: Vec<mdk_core::mae::Mask>,
}

impl GradFixture {
    fn new(seed: u64) -> Self {
        let mut cfg = ModelConfig::tiny();
        cfg.label_mean = 30.0;
        cfg.label_std = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..2).map(|_| Tensor::from_fn(cfg.img_size.to_vec(), |_| rng.gen::<f64>()).unwrap()).collect();
        let masks = (0..2)
            .map(|i| random_mask(cfg.n_tokens(), cfg.mask_ratio, &mut stream(seed, &format!("img{i}"), "mask")))
            .collect();
        let mut params = ModelParams::init(&cfg, seed).unwrap();
        for e in params.entries_mut() {
            if e.trainable {
                e.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
            }
        }
        Self { cfg, params, images, labels: vec![27.0, 36.5], masks }
    }

    fn batch(&self) -> Vec<BatchItem<'_>> {
        (0..2)
            .map(|i| BatchItem { image: &self.images[i], label_months: self.labels[i], mask: self.masks[i].clone() })
            .collect()
    }
}

fn c5_gradients() -> Outcome {
    let fx = GradFixture::new(5);
    let batch = fx.batch();
    let (grads, _) = backward(&fx.params, &fx.cfg, &batch, ForwardMode::Joint).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let (mut checked, mut worst, mut floor_only) = (0, 0.0f64, 0);
    for (i, e) in fx.params.entries().iter().enumerate() {
        if !e.trainable {
            continue;
        }
        for j in 0..e.tensor.len() {
            let loss_at = |delta: f64| {
                let mut p = fx.params.clone();
                p.entries_mut()[i].tensor.data_mut()[j] += delta;
                backward(&p, &fx.cfg, &batch, ForwardMode::Joint).unwrap().1.total
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let an = grads.entries()[i].tensor.data()[j];
            let scale = fd.abs().max(an.abs());
            let err = (fd - an).abs();
            // relative 1e-4; the 1e-8 absolute floor only admits entries whose
            // exact gradient is zero (the key-projection biases: softmax is
            // invariant to a shift shared by all keys), where central
            // differences return rounding noise
            ensure!(err <= 1e-4 * scale || err <= 1e-8, "{}[{j}]: fd {fd:e} vs analytic {an:e}", e.name);
            if err > 1e-4 * scale {
                ensure!(e.name.ends_with("attn.qkv.bias"), "{}[{j}] passes only under the absolute floor", e.name);
                floor_only += 1;
            }
            if scale > 1e-6 {
                worst = worst.max(err / scale);
            }
            checked += 1;
        }
    }
    ensure!(checked == fx.params.trainable_count(), "checked {checked} of {}", fx.params.trainable_count());

    let with_alpha = |a: f64| ModelConfig { alpha: a, ..fx.cfg.clone() };
    let g1 = backward(&fx.params, &with_alpha(1.0), &batch, ForwardMode::Joint).unwrap().0;
    let g0 = backward(&fx.params, &with_alpha(0.0), &batch, ForwardMode::Joint).unwrap().0;
    let mut lin_worst: f64 = 0.0;
    for alpha in [0.1, 0.37, 0.5, 0.9] {
        let ga = backward(&fx.params, &with_alpha(alpha), &batch, ForwardMode::Joint).unwrap().0;
        for ((a, b1), b0) in ga.entries().iter().zip(g1.entries()).zip(g0.entries()) {
            for ((x, y1), y0) in a.tensor.data().iter().zip(b1.tensor.data()).zip(b0.tensor.data()) {
                let d = (x - (alpha * y1 + (1.0 - alpha) * y0)).abs();
                lin_worst = lin_worst.max(d);
                ensure!(d <= 1e-10, "{} at alpha {alpha}: linearity off by {d:e}", a.name);
            }
        }
    }
    Ok(format!(
        "{checked}/{checked} parameters (worst rel {worst:.1e}, {floor_only} zero-gradient key biases); linearity {lin_worst:.1e}"
    ))
}

fn c6_ledger_and_locality() -> Outcome {
    let toy = ToyCorpusConfig { n_sequences: 4, size: 16, ..Default::default() };
    let seqs: Vec<_> = toy_corpus(&toy, 6).iter().map(|s| homogenize_sequence(s).unwrap()).collect();
    let records = generate_case(&seqs, &TrainingCase::new(1).unwrap(), &GenerationConfig::default())
        .map_err(|e| e.to_string())?;
    let split = DatasetSplit { train: records, val: vec![], test: vec![], fractions: [1.0, 0.0, 0.0] };
    let mut cfg = TrainConfig::desk(300);
    cfg.model = ModelConfig {
        img_size: [16, 16],
        patch: 4,
        enc_blocks: 1,
        enc_dim: 16,
        dec_dim: 8,
        dec_blocks: 1,
        ..ModelConfig::desk()
    };
    cfg.schedule.lambda_t = 1e-3;
    cfg.batch_size = 4;
    let out = train(&split, &cfg, 6).map_err(|e| e.to_string())?;
    ensure!(out.history.len() == 300, "{} steps recorded", out.history.len());
    let alpha = cfg.model.alpha;
    for r in &out.history {
        let l = &r.loss;
        let eq3 = alpha * l.l_reg + (1.0 - alpha) * l.l_ssat;
        ensure!(
            l.total.to_bits() == eq3.to_bits(),
            "step {}: L = {} but the convex combination gives {eq3}",
            r.step,
            l.total
        );
        ensure!(l.total.is_finite() && l.l_ssat > 0.0, "step {}: degenerate losses {l:?}", r.step);
    }

    // locality on the trained model: adversarial target values on kept
    // patches never change l_ssat; changing a masked patch does
    let mcfg = &out.checkpoint.config;
    let params = &out.checkpoint.params;
    let img = &split.train[0].image;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mask = random_mask(mcfg.n_tokens(), mcfg.mask_ratio, &mut rng);
    let base = forward_with_target(params, mcfg, img, img, &mask, ForwardMode::Joint, Some(20.0))
        .map_err(|e| e.to_string())?;
    let l0 = base.loss.unwrap().l_ssat;
    let tp = patchify(img, mcfg.patch).unwrap();
    let pl = mcfg.patch_len();
    for trial in 0..25 {
        let mut t = tp.clone();
        for &k in &mask.kept {
            t.data_mut()[k * pl..(k + 1) * pl].iter_mut().for_each(|v| *v = rng.gen_range(-1e8..1e8));
        }
        let target = unpatchify(&t, mcfg.patch, mcfg.img_size[0], mcfg.img_size[1]).unwrap();
        let o = forward_with_target(params, mcfg, img, &target, &mask, ForwardMode::Joint, Some(20.0)).unwrap();
        let l = o.loss.unwrap().l_ssat;
        ensure!(l.to_bits() == l0.to_bits(), "trial {trial}: kept-patch perturbation moved l_ssat {l0} -> {l}");
    }
    let mut t = tp.clone();
    t.data_mut()[mask.masked[0] * pl] += 1.0;
    let target = unpatchify(&t, mcfg.patch, mcfg.img_size[0], mcfg.img_size[1]).unwrap();
    let moved = forward_with_target(params, mcfg, img, &target, &mask, ForwardMode::Joint, Some(20.0))
        .unwrap()
        .loss
        .unwrap()
        .l_ssat;
    ensure!(moved != l0, "masked-patch change left l_ssat unchanged");
    Ok("300/300 steps match the convex combination bitwise; 25 adversarial kept-patch perturbations leave l_ssat unchanged".into())
}

fn toy_train_config(steps: usize) -> TrainConfig {
    let mut tc = TrainConfig::desk(steps);
    tc.model = ModelConfig { enc_dim: 32, enc_blocks: 2, dec_dim: 16, dec_blocks: 1, ..ModelConfig::desk() };
    tc.schedule.lambda_t = 1e-3;
    tc
}

fn c7_toy_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let one = [("MDK_THREADS", "1")];
    mdk_ok(&["fixtures", "--preset", "toy", "--seed", "42", "--out", s(&d.join("corpus"))], &one)?;
    let manifest = d.join("corpus/manifest.csv");
    write_json(&d.join("gen.json"), &GenerationConfig { case: 7, ..Default::default() });
    write_json(&d.join("train.json"), &toy_train_config(1000));
    mdk_ok(
        &["dataset", "--manifest", s(&manifest), "--config", s(&d.join("gen.json")), "--out", s(&d.join("data"))],
        &one,
    )?;
    mdk_ok(
        &["train", "--data", s(&d.join("data")), "--config", s(&d.join("train.json")), "--out", s(&d.join("model"))],
        &one,
    )?;
    let ck_path = d.join("model/checkpoint.mdck");
    let train_mean = read_checkpoint(&ck_path).map_err(|e| e.to_string())?.config.label_mean;

    let mut rmse = BTreeMap::new();
    let mut baseline = None;
    for kind in TestKind::ALL {
        let out = d.join(format!("pred_{}", kind.as_str()));
        mdk_ok(
            &[
                "predict",
                "--checkpoint",
                s(&ck_path),
                "--manifest",
                s(&manifest),
                "--kind",
                kind.as_str(),
                "--out",
                s(&out),
            ],
            &one,
        )?;
        let preds_path = out.join("predictions.csv");
        mdk_ok(&["eval", "--predictions", s(&preds_path), "--out", s(&out)], &one)?;
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        rmse.insert(kind.as_str(), report["total"]["rmse"].as_f64().unwrap());
        if baseline.is_none() {
            let preds = read_predictions(std::fs::File::open(&preds_path).unwrap()).unwrap();
            let mse = preds.iter().map(|p| (p.truth - train_mean).powi(2)).sum::<f64>() / preds.len() as f64;
            baseline = Some(mse.sqrt());
        }
    }
    let baseline = baseline.unwrap();
    let (best_kind, best) = rmse.iter().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, v)| (*k, *v)).unwrap();
    let abs = rmse["hodmd_modes_abs"];
    let table: Vec<String> = rmse.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
    let summary = format!("baseline {baseline:.3}; {}; best {best_kind}", table.join(", "));
    ensure!(abs <= 0.7 * baseline, "hodmd_modes_abs RMSE {abs:.3} does not beat the mean baseline by 30% ({summary})");
    ensure!(best <= 0.7 * baseline, "best RMSE {best:.3} does not beat the mean baseline by 30% ({summary})");
    ensure!(abs <= 1.1 * best, "hodmd_modes_abs RMSE {abs:.3} not within 10% of best {best:.3} ({summary})");
    Ok(format!("{summary}; modes-abs/best = {:.3}, best/baseline = {:.3}", abs / best, best / baseline))
}

fn c8_schedule_and_adamw() -> Outcome {
    for n_iter in [105, 1005] {
        let s = ScheduleConfig::reference(n_iter);
        let at = |i| lr_at(i, &s).unwrap();
        ensure!(at(s.warmup) == 2.5e-4, "lr_at(N_w) = {}", at(s.warmup));
        ensure!(at(n_iter) == 0.0, "lr_at(N_iter) = {}", at(n_iter));
        ensure!(at((s.warmup + n_iter) / 2) == 1.25e-4, "midpoint lr = {}", at((s.warmup + n_iter) / 2));
    }

    // hand-evaluated AdamW on the scalar regression-head bias
    let cfg = ModelConfig::tiny();
    let mut p = ModelParams::init(&cfg, 1).unwrap();
    let i = p.index_of("reg_head.bias").unwrap();
    p.entries_mut()[i].tensor.data_mut()[0] = 1.0;
    let mut g = p.zeros_like();
    let opt = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
    let mut st = OptimState::new(&p, opt);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, (grad, lr)) in [(1.0, 0.1), (-0.5, 0.05), (0.25, 0.02)].into_iter().enumerate() {
        g.entries_mut()[i].tensor.data_mut()[0] = grad;
        adamw_step(&mut p, &g, &mut st, lr).map_err(|e| e.to_string())?;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        let (mh, vh) = (m / (1.0 - b1.powi(t as i32 + 1)), v / (1.0 - b2.powi(t as i32 + 1)));
        w -= lr * mh / (vh.sqrt() + eps);
        let got = p.get("reg_head.bias").unwrap().data()[0];
        ensure!((got - w).abs() <= 1e-12, "step {}: {got} vs hand {w}", t + 1);
    }

    // decoupled decay: a zero gradient shrinks `.weight` entries by (1 - lr*wd)
    let p0 = ModelParams::init(&cfg, 2).unwrap();
    let mut p = p0.clone();
    let mut st = OptimState::new(&p, AdamWConfig::default());
    adamw_step(&mut p, &p0.zeros_like(), &mut st, 0.1).map_err(|e| e.to_string())?;
    for (a, b) in p.entries().iter().zip(p0.entries()) {
        let factor = if b.name.ends_with(".weight") { 1.0 - 0.1 * 0.05 } else { 1.0 };
        for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
            ensure!((x - y * factor).abs() <= 1e-12, "{}: decay {x} vs {}", a.name, y * factor);
        }
    }
    Ok("pins exact for N_iter 105 and 1005; 3 AdamW steps and decoupled decay within 1e-12".into())
}

/// Every file under `root`, relative path -> bytes.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Runs every subcommand into `d`; returns the stdout of the deterministic ones.
fn pipeline(d: &Path, envs: &[(&str, &str)]) -> Result<Vec<String>, String> {
    let mut outs = vec![
        mdk_ok(&["fixtures", "--preset", "two-tone", "--seed", "9", "--out", s(&d.join("tt"))], envs)?,
        mdk_ok(&["fixtures", "--preset", "toy", "--count", "9", "--seed", "9", "--out", s(&d.join("toy"))], envs)?,
    ];
    outs.push(mdk_ok(&["decompose", "--manifest", s(&d.join("tt/manifest.csv")), "--out", s(&d.join("dec"))], envs)?);
    outs.push(mdk_ok(&["dataset", "--dry-run", "--out", s(&d.join("dry"))], envs)?);
    write_json(&d.join("gen.json"), &GenerationConfig { case: 7, ..Default::default() });
    outs.push(mdk_ok(
        &[
            "dataset",
            "--manifest",
            s(&d.join("toy/manifest.csv")),
            "--config",
            s(&d.join("gen.json")),
            "--seed",
            "9",
            "--out",
            s(&d.join("data")),
        ],
        envs,
    )?);
    let mut tc = toy_train_config(30);
    tc.model = ModelConfig { enc_dim: 16, enc_blocks: 1, dec_dim: 8, dec_blocks: 1, ..tc.model };
    write_json(&d.join("train.json"), &tc);
    outs.push(mdk_ok(
        &[
            "train",
            "--data",
            s(&d.join("data")),
            "--config",
            s(&d.join("train.json")),
            "--seed",
            "9",
            "--out",
            s(&d.join("model")),
        ],
        envs,
    )?);
    let ck = d.join("model/checkpoint.mdck");
    outs.push(mdk_ok(
        &[
            "predict",
            "--checkpoint",
            s(&ck),
            "--manifest",
            s(&d.join("toy/manifest.csv")),
            "--kind",
            "hodmd-modes-abs",
            "--out",
            s(&d.join("pred")),
        ],
        envs,
    )?);
    outs.push(mdk_ok(
        &["eval", "--predictions", s(&d.join("pred/predictions.csv")), "--out", s(&d.join("eval"))],
        envs,
    )?);
    // bench: only the image counts are deterministic, the timings are not
    mdk_ok(
        &["bench", "--checkpoint", s(&ck), "--manifest", s(&d.join("tt/manifest.csv")), "--out", s(&d.join("bench"))],
        envs,
    )?;
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("bench/timing.json")).unwrap()).unwrap();
    outs.push(format!("bench {} {}", timing["warmup_images"], timing["measured_images"]));
    std::fs::remove_dir_all(d.join("bench")).unwrap();
    Ok(outs)
}

fn c9_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    // different thread counts as well: results must not depend on scheduling
    let out_a = pipeline(a.path(), &[("MDK_THREADS", "1")])?;
    let out_b = pipeline(b.path(), &[("MDK_THREADS", "3")])?;
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    ensure!(
        sa.keys().eq(sb.keys()),
        "file sets differ: {:?} vs {:?}",
        sa.keys().collect::<Vec<_>>(),
        sb.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &sa {
        ensure!(&sb[path] == bytes, "{} differs between runs", path.display());
    }
    for (x, y) in out_a.iter().zip(&out_b) {
        // stdout may name the (different) output directories
        let strip = |t: &str, root: &Path| t.replace(s(root), "<out>");
        ensure!(strip(x, a.path()) == strip(y, b.path()), "stdout differs:\n{x}\nvs\n{y}");
    }
    ensure!(out_a.last().unwrap().starts_with("bench 10 "), "bench counts {}", out_a.last().unwrap());
    Ok(format!("7 subcommands, {} output files byte-identical (1 vs 3 threads)", sa.len()))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion { name: "dataset case count reproduction", budget: Duration::from_secs(1), run: c1_case_totals },
    Criterion { name: "SVD truncation identity", budget: Duration::from_secs(10), run: c2_svd_identity },
    Criterion { name: "HODMD two-tone spectral recovery", budget: Duration::from_secs(30), run: c3_hodmd_two_tone },
    Criterion { name: "d=1 DMD vs planted linear system", budget: Duration::from_secs(5), run: c4_dmd_oracle },
    Criterion { name: "Gradient suite (FD + alpha linearity)", budget: Duration::from_secs(60), run: c5_gradients },
    Criterion {
        name: "joint loss combination + masked-loss locality",
        budget: Duration::from_secs(120),
        run: c6_ledger_and_locality,
    },
    Criterion { name: "Toy end-to-end", budget: Duration::from_secs(600), run: c7_toy_end_to_end },
    Criterion { name: "Schedule / AdamW pins", budget: Duration::from_secs(1), run: c8_schedule_and_adamw },
    Criterion { name: "Determinism of every subcommand", budget: Duration::from_secs(600), run: c9_determinism },
];

#[test]
fn primary_acceptance_criteria() {
    let mut failed = Vec::new();
    let mut report = std::io::stderr();
    for (n, c) in CRITERIA.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let elapsed = t.elapsed();
        let line = match result {
            Ok(detail) if elapsed <= c.budget => {
                format!("PASS [{}] {} ({:.2?} <= {:?}): {detail}", n + 1, c.name, elapsed, c.budget)
            }
            Ok(detail) => {
                failed.push(c.name);
                format!("FAIL [{}] {} (over budget: {:.2?} > {:?}): {detail}", n + 1, c.name, elapsed, c.budget)
            }
            Err(why) => {
                failed.push(c.name);
                format!("FAIL [{}] {} ({:.2?}): {why}", n + 1, c.name, elapsed)
            }
        };
        // written to the raw stream so it shows up without --nocapture
        writeln!(report, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
