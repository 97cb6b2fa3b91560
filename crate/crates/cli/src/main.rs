//! `mdk`: command-line front end for the modal-decomposition and
//! masked-autoencoder regression pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
//! missing input files, invalid configuration).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use mdk_core::dataset::{
    assign_splits_with_hints, decompose_sequence, dry_run, generate_case, homogenize_sequence, partition, read_archive,
    read_summary, reference_summary, write_archive, DataKind, GenerationConfig, SequenceMeta, TrainingCase,
};
use mdk_core::eval::{bench, evaluate, predict_sequence, read_predictions, write_predictions, TestKind};
use mdk_core::fixtures::{toy_corpus, two_tone_preset, write_corpus, ToyCorpusConfig};
use mdk_core::hodmd::write_spectrum_file;
use mdk_core::io::{load_sequence, read_manifest, write_tensor_file, ManifestEntry};
use mdk_core::mae::{read_checkpoint, train, write_checkpoint, MaeError, TrainConfig};
use mdk_core::{SplitHint, VideoSequence};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_TRAIN_STEPS: usize = 1000;
const TOY_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Parser, Debug)]
#[command(name = "mdk", version, about = "Modal decomposition + masked-autoencoder regression pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Random seed (defaults to the config file's seed, else 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the MDK_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// SVD + iterative HODMD of every manifest sequence: spectra, reconstructions and a summary.
    Decompose(DecomposeArgs),
    /// Generate a training-case dataset archive (or count it from metadata with --dry-run).
    Dataset(DatasetArgs),
    /// Train the regressor on a dataset archive.
    Train(TrainArgs),
    /// Predict failure ages for the test sequences of a manifest.
    Predict(PredictArgs),
    /// Compute the metric report of a predictions CSV.
    Eval(EvalArgs),
    /// Time decomposition and prediction per image.
    Bench(BenchArgs),
    /// Write a synthetic video corpus with its manifest.
    Fixtures(FixturesArgs),
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Generation config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Sequence manifest; with --dry-run, an optional metadata summary CSV
    /// (`heart_state,set,sequences,snapshots,svd_modes,hodmd_modes`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Training case 1..=14 (overrides the config's case).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=14))]
    case: Option<u8>,
    /// Generation config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count images from metadata only (the bundled reference summary by default).
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset archive directory (contains index.csv).
    #[arg(long)]
    data: PathBuf,
    /// Training config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Test kind, e.g. original, svd1-recon, hodmd-modes-abs.
    #[arg(long)]
    kind: String,
    /// Generation config (JSON) for the test transform.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions CSV written by `predict`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Generation config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FixturesArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences (toy preset only).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    /// Three two-tone sequences (noise 0.01).
    TwoTone,
    /// Frequency-labelled corpus with train/val/test split hints.
    Toy,
}

/// How a command failed; decides the exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime<E: Into<anyhow::Error>>(context: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Runtime(e.into().context(context))
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Parses an optional JSON config; unreadable or invalid configs are usage errors.
fn load_config<T: DeserializeOwned>(path: Option<&Path>) -> Result<Option<T>, Failure> {
    let Some(path) = path else { return Ok(None) };
    require_file(path, "config")?;
    let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map(Some).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn generation_config(path: Option<&Path>, seed: Option<u64>) -> Result<GenerationConfig, Failure> {
    let mut cfg: GenerationConfig = load_config(path)?.unwrap_or_default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display())).map_err(Failure::Runtime)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(Failure::Runtime)
}

/// Loads and homogenizes every entry (in parallel, manifest order kept).
fn load_sequences(entries: &[ManifestEntry], dt_seconds: f64) -> anyhow::Result<Vec<VideoSequence>> {
    entries
        .par_iter()
        .map(|e| {
            let s = load_sequence(e, dt_seconds)?;
            homogenize_sequence(&s).with_context(|| format!("homogenizing {}", s.id()))
        })
        .collect()
}

fn read_manifest_checked(path: &Path) -> Result<Vec<ManifestEntry>, Failure> {
    require_file(path, "manifest")?;
    let entries = read_manifest(path).map_err(runtime("reading manifest"))?;
    if entries.is_empty() {
        return Err(Failure::Runtime(anyhow!("manifest {} lists no sequences", path.display())));
    }
    Ok(entries)
}

fn cmd_decompose(a: &DecomposeArgs, seed: Option<u64>) -> CmdResult {
    let entries = read_manifest_checked(&a.manifest)?;
    let gcfg = generation_config(a.config.as_deref(), seed)?;
    create_dir(&a.out)?;
    let seqs = load_sequences(&entries, gcfg.dt_seconds)?;
    let rows: Vec<(String, Option<String>)> = seqs
        .par_iter()
        .map(|s| -> anyhow::Result<(String, Option<String>)> {
            let k = s.num_frames();
            let short = k < gcfg.min_snapshots;
            let kinds: &[DataKind] =
                if short { &[DataKind::Svd1Recon] } else { &[DataKind::Svd1Recon, DataKind::HodmdRecon] };
            let p = decompose_sequence(s, kinds, &gcfg).with_context(|| format!("decomposing {}", s.id()))?;
            let svd1 = p.svd1.as_ref().expect("svd stage requested");
            write_tensor_file(a.out.join(format!("{}.svd1.mdt", s.id())), &svd1.reconstructions)?;
            let mut row = format!("{},{k},{}", s.id(), svd1.rank());
            let warning = match &p.hodmd {
                Some(h) => {
                    write_spectrum_file(a.out.join(format!("{}.mdsp", s.id())), &h.spectrum)?;
                    write_tensor_file(a.out.join(format!("{}.hodmd.mdt", s.id())), &h.reconstruction)?;
                    let ranks: Vec<String> = h.spectrum.retained_hosvd_ranks.iter().map(|r| r.to_string()).collect();
                    // strongest oscillating mode (the static background has omega = 0)
                    let dominant = h
                        .spectrum
                        .dominant(h.spectrum.len())
                        .into_iter()
                        .map(|m| m.frequency_hz().abs())
                        .find(|f| *f > 0.0)
                        .unwrap_or(0.0);
                    let _ =
                        write!(row, ",{},{},{},{dominant},ok", h.spectrum.len(), ranks.join("x"), h.outer_iterations);
                    None
                }
                None => {
                    row.push_str(",0,,0,,too_short");
                    Some(format!(
                        "warning: sequence {}: sequence too short ({k} < {} snapshots), HODMD skipped",
                        s.id(),
                        gcfg.min_snapshots
                    ))
                }
            };
            Ok((row, warning))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut summary =
        String::from("sequence_id,snapshots,svd_rank,hodmd_modes,hosvd_ranks,outer_iterations,dominant_hz,status\n");
    for (row, warning) in &rows {
        if let Some(w) = warning {
            eprintln!("{w}");
        }
        summary.push_str(row);
        summary.push('\n');
    }
    write_file(&a.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_dataset(a: &DatasetArgs, seed: Option<u64>) -> CmdResult {
    let mut gcfg = generation_config(a.config.as_deref(), seed)?;
    if let Some(c) = a.case {
        gcfg.case = c;
    }
    if a.dry_run {
        return dataset_dry_run(a, &gcfg);
    }
    let manifest = a.manifest.as_deref().ok_or_else(|| usage("dataset: --manifest is required (or use --dry-run)"))?;
    let out = a.out.as_deref().ok_or_else(|| usage("dataset: --out is required"))?;
    let case = gcfg.training_case().map_err(|e| usage(e.to_string()))?;
    let entries = read_manifest_checked(manifest)?;
    let seqs = load_sequences(&entries, gcfg.dt_seconds)?;
    let metas: Vec<(SequenceMeta, Option<SplitHint>)> = seqs
        .iter()
        .map(|s| {
            let meta = SequenceMeta {
                id: s.id().to_string(),
                heart_state: s.annotation.heart_state.clone(),
                label_months: s.annotation.failure_age_months,
            };
            (meta, s.annotation.split_hint)
        })
        .collect();
    let assignment =
        assign_splits_with_hints(&metas, gcfg.fractions, gcfg.seed).map_err(runtime("assigning splits"))?;
    let records = generate_case(&seqs, &case, &gcfg).map_err(runtime("generating dataset"))?;
    let split = partition(records, &assignment, gcfg.fractions).map_err(runtime("partitioning dataset"))?;
    create_dir(out)?;
    write_archive(out, &split).map_err(runtime("writing archive"))?;

    let mut table = String::from("kind,train,val,test\n");
    let mut totals = [0usize; 3];
    for &kind in &case.kinds {
        let n = [SplitHint::Train, SplitHint::Val, SplitHint::Test]
            .map(|p| split.part(p).iter().filter(|r| r.kind == kind).count());
        for (t, v) in totals.iter_mut().zip(n) {
            *t += v;
        }
        let _ = writeln!(table, "{},{},{},{}", kind.as_str(), n[0], n[1], n[2]);
    }
    let _ = writeln!(table, "total,{},{},{}", totals[0], totals[1], totals[2]);
    print!("{table}");
    Ok(())
}

fn dataset_dry_run(a: &DatasetArgs, gcfg: &GenerationConfig) -> CmdResult {
    let rows = match &a.manifest {
        Some(p) => {
            require_file(p, "summary")?;
            read_summary(p).map_err(runtime("reading metadata summary"))?
        }
        None => reference_summary(),
    };
    let per_set: Vec<Vec<(TrainingCase, usize)>> =
        [SplitHint::Train, SplitHint::Val, SplitHint::Test].iter().map(|&s| dry_run(&rows, s)).collect();
    let mut table = String::from("case,kinds,train,val,test\n");
    let rows = per_set[0].iter().zip(&per_set[1]).zip(&per_set[2]);
    for (((case, train), (_, val)), (_, test)) in rows {
        if a.case.is_some() && case.id != gcfg.case {
            continue;
        }
        let kinds: Vec<&str> = case.kinds.iter().map(|k| k.as_str()).collect();
        let _ = writeln!(table, "{},{},{train},{val},{test}", case.id, kinds.join("+"));
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("counts.csv"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> CmdResult {
    require_dir(&a.data, "dataset archive")?;
    let cfg: TrainConfig = load_config(a.config.as_deref())?.unwrap_or_else(|| TrainConfig::desk(DEFAULT_TRAIN_STEPS));
    cfg.validate().map_err(|e| usage(format!("training config: {e}")))?;
    let seed = seed.unwrap_or(cfg.seed);
    let split = read_archive(&a.data).map_err(runtime("reading dataset archive"))?;
    create_dir(&a.out)?;
    let outcome = match train(&split, &cfg, seed) {
        Ok(o) => o,
        Err(MaeError::Diverged { step, last_good }) => {
            let path = a.out.join("checkpoint.last_good.mdck");
            write_checkpoint(&path, &last_good).map_err(runtime("writing checkpoint"))?;
            return Err(Failure::Runtime(anyhow!(
                "training diverged at step {step}; last good checkpoint written to {}",
                path.display()
            )));
        }
        Err(e) => return Err(Failure::Runtime(anyhow::Error::new(e).context("training"))),
    };
    write_checkpoint(a.out.join("checkpoint.mdck"), &outcome.checkpoint).map_err(runtime("writing checkpoint"))?;
    let mut csv = String::from("step,lr,total,l_reg,l_ssat,masked_patches\n");
    for r in &outcome.history {
        let l = &r.loss;
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.step, r.lr, l.total, l.l_reg, l.l_ssat, l.masked_patch_count);
    }
    write_file(&a.out.join("loss_history.csv"), &csv)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} steps on {} images; final loss {} (l_reg {}, l_ssat {})",
            outcome.history.len(),
            split.train.len(),
            last.loss.total,
            last.loss.l_reg,
            last.loss.l_ssat
        );
    }
    Ok(())
}

/// Manifest sequences hinted `test`, or all of them when none is.
fn test_entries(entries: Vec<ManifestEntry>) -> Vec<ManifestEntry> {
    let hinted: Vec<ManifestEntry> =
        entries.iter().filter(|e| e.annotation.split_hint == Some(SplitHint::Test)).cloned().collect();
    if hinted.is_empty() {
        entries
    } else {
        hinted
    }
}

fn load_checkpoint_checked(path: &Path) -> Result<mdk_core::mae::Checkpoint, Failure> {
    require_file(path, "checkpoint")?;
    read_checkpoint(path).map_err(runtime("reading checkpoint"))
}

fn cmd_predict(a: &PredictArgs, seed: Option<u64>) -> CmdResult {
    let kind = TestKind::parse(&a.kind).map_err(|e| usage(e.to_string()))?;
    let ck = load_checkpoint_checked(&a.checkpoint)?;
    let entries = test_entries(read_manifest_checked(&a.manifest)?);
    let gcfg = generation_config(a.config.as_deref(), seed)?;
    let seqs = load_sequences(&entries, gcfg.dt_seconds)?;
    let mut preds = Vec::with_capacity(seqs.len());
    for s in &seqs {
        match predict_sequence(&ck.params, &ck.config, s, kind, &gcfg) {
            Ok(p) => preds.push(p),
            Err(mdk_core::eval::EvalError::SequenceTooShort { id, k, min }) => {
                eprintln!("warning: sequence {id}: sequence too short ({k} < {min} snapshots), skipped");
            }
            Err(e) => return Err(Failure::Runtime(anyhow::Error::new(e).context(format!("predicting {}", s.id())))),
        }
    }
    if preds.is_empty() {
        return Err(Failure::Runtime(anyhow!("no sequence could be predicted")));
    }
    create_dir(&a.out)?;
    let path = a.out.join("predictions.csv");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_predictions(std::io::BufWriter::new(file), &preds).map_err(runtime("writing predictions"))?;
    println!("predicted {} sequences with test kind {}", preds.len(), kind.as_str());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    require_file(&a.predictions, "predictions")?;
    let file = fs::File::open(&a.predictions).with_context(|| format!("opening {}", a.predictions.display()))?;
    let preds = read_predictions(std::io::BufReader::new(file)).map_err(runtime("reading predictions"))?;
    let report = evaluate(&preds).map_err(runtime("evaluating"))?;
    let text = report.to_text();
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("metrics.json"), &report.to_json().map_err(runtime("serializing metrics"))?)?;
        write_file(&out.join("metrics.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: Option<u64>) -> CmdResult {
    let ck = load_checkpoint_checked(&a.checkpoint)?;
    let entries = read_manifest_checked(&a.manifest)?;
    let gcfg = generation_config(a.config.as_deref(), seed)?;
    let seqs = load_sequences(&entries, gcfg.dt_seconds)?;
    let timing = bench(&ck.params, &ck.config, &seqs, &gcfg).map_err(runtime("benchmarking"))?;
    let mut json = serde_json::to_string_pretty(&timing).map_err(runtime("serializing timings"))?;
    json.push('\n');
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("timing.json"), &json)?;
    }
    print!("{json}");
    Ok(())
}

fn cmd_fixtures(a: &FixturesArgs, seed: Option<u64>) -> CmdResult {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let (seqs, fractions) = match a.preset {
        Preset::TwoTone => {
            if a.count.is_some() {
                return Err(usage("fixtures: --count applies to the toy preset only"));
            }
            (two_tone_preset(seed), None)
        }
        Preset::Toy => {
            let mut cfg = ToyCorpusConfig::default();
            if let Some(n) = a.count {
                if n == 0 {
                    return Err(usage("fixtures: --count must be positive"));
                }
                cfg.n_sequences = n;
            }
            (toy_corpus(&cfg, seed), Some(TOY_FRACTIONS))
        }
    };
    let manifest = write_corpus(&a.out, &seqs, fractions, seed).map_err(runtime("writing corpus"))?;
    println!("wrote {} sequences; manifest {}", seqs.len(), manifest.display());
    Ok(())
}

/// Thread count from `--threads`, else `MDK_THREADS`; `None` keeps rayon's default.
fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MDK_THREADS") {
            Ok(v) if !v.trim().is_empty() => {
                Some(v.trim().parse().map_err(|_| usage(format!("MDK_THREADS={v:?} is not a thread count")))?)
            }
            _ => None,
        },
    };
    match n {
        Some(0) => Err(usage("thread count must be positive")),
        n => Ok(n),
    }
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Decompose(a) => cmd_decompose(a, cli.seed),
        Command::Dataset(a) => cmd_dataset(a, cli.seed),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Predict(a) => cmd_predict(a, cli.seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a, cli.seed),
        Command::Fixtures(a) => cmd_fixtures(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
