//! The `ah-fusion` command line.
//!
//! Every subcommand writes its primary outputs atomically. With `--report`
//! a JSON run report is written as well: the resolved configuration, the
//! output paths, the seed and, under `metadata`, the wall time (the only
//! field that differs between identical runs).
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::data::{
    au_index, load_manifest, parse_feature_matrix, write_dataset, Dataset, Split, NUM_AUS,
};
use crate::error::{Error, ErrorKind, Result};
use crate::io::atomic_write;
use crate::metrics::{evaluate, format_table_row};
use crate::model::checkpoint;
use crate::model::{Fusion, Modality, ModelConfig, VisualFeatures};
use crate::stats::{rank_features, report_csv};
use crate::synthetic::{generate, SynthConfig, SynthMode, VariabilityShift};
use crate::train::{train, ParamGroup, TrainConfig};
use crate::window::{window_stats, WindowConfig, WindowedSequence};

/// Environment variable supplying the default `--seed`.
pub const SEED_ENV: &str = "AH_FUSION_SEED";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ah-fusion",
    version,
    about = "Divergence-based multimodal fusion for ambivalence/hesitancy video classification"
)]
struct Cli {
    /// Also write a JSON run report to this path.
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<PathBuf>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest and feature files).
    GenSynth(GenSynthArgs),
    /// Compute sliding-window AU descriptors for one visual feature file.
    Window(WindowArgs),
    /// Train a fusion or unimodal model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Rank AU summary features by Mann-Whitney effect size.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Output directory; receives manifest.jsonl and features/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    n_samples: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "divergence-label")]
    mode: SynthMode,
    /// Conflict strength κ in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    /// Visual length range MIN:MAX (inclusive).
    #[arg(long, default_value = "16:48", value_parser = parse_range)]
    visual_len: (usize, usize),
    /// Audio length range MIN:MAX (inclusive).
    #[arg(long, default_value = "4:12", value_parser = parse_range)]
    audio_len: (usize, usize),
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.8)]
    drift_rho: f64,
    #[arg(long, default_value_t = 1.0 / 6.0)]
    val_fraction: f64,
    #[arg(long, default_value_t = 1.0 / 6.0)]
    test_fraction: f64,
    /// Scale one AU's variability in A/H videos, e.g. AU06:1.3.
    #[arg(long, value_parser = parse_shift)]
    variability_shift: Option<VariabilityShift>,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// Visual feature CSV (T × 20, no header).
    #[arg(long)]
    input: PathBuf,
    /// Descriptor CSV to write (N × 80, with header).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    length: usize,
    #[arg(long, default_value_t = 8)]
    step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    A,
    B,
    C,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VisualArg {
    Raw,
    Windowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Visual,
    Audio,
    Text,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "b", ignore_case = true)]
    fusion: FusionArg,
    #[arg(long, value_enum, default_value = "raw")]
    visual: VisualArg,
    #[arg(long, default_value_t = 16)]
    window_length: usize,
    #[arg(long, default_value_t = 8)]
    window_step: usize,
    /// Train a single-modality model instead of a fusion variant.
    #[arg(long, value_enum, conflicts_with = "fusion")]
    modality: Option<ModalityArg>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; with `--fusion all`, an output directory.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV (ignored with `--fusion all`, which writes
    /// one history per variant into the output directory).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Learning rate of the text projection (defaults to --lr).
    #[arg(long)]
    text_lr: Option<f64>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 8)]
    patience: usize,
    /// Run all epochs without early stopping.
    #[arg(long)]
    no_early_stop: bool,
    /// Split scored in the `--fusion all` comparison table.
    #[arg(long, default_value = "test")]
    table_split: Split,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let lo = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}

fn parse_shift(s: &str) -> std::result::Result<VariabilityShift, String> {
    let (code, factor) = s
        .split_once(':')
        .ok_or_else(|| format!("expected AU:FACTOR, got {s:?}"))?;
    let au = au_index(code).ok_or_else(|| format!("unknown action unit {code:?}"))?;
    let factor = factor.parse().map_err(|e| format!("{factor:?}: {e}"))?;
    Ok(VariabilityShift { au, factor })
}

#[derive(Debug, Serialize)]
struct RunReport {
    command: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    outputs: Vec<PathBuf>,
    /// Non-deterministic fields, excluded from reproducibility comparisons.
    metadata: serde_json::Value,
}

struct Outcome {
    seed: Option<u64>,
    config: serde_json::Value,
    outputs: Vec<PathBuf>,
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if let Some(flags) = valid_flags(&argv) {
                eprintln!("valid flags: {}", flags.join(", "));
            }
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();

    let started = Instant::now();
    let (name, result) = match cli.command {
        Command::GenSynth(a) => ("gen-synth", gen_synth(a)),
        Command::Window(a) => ("window", window(a)),
        Command::Train(a) => ("train", train_cmd(a)),
        Command::Eval(a) => ("eval", eval_cmd(a)),
        Command::Analyze(a) => ("analyze", analyze(a)),
    };
    let result = result.and_then(|outcome| {
        let Some(path) = &cli.report else {
            return Ok(());
        };
        let report = RunReport {
            command: name,
            seed: outcome.seed,
            config: outcome.config,
            outputs: outcome.outputs,
            metadata: json!({ "wall_time_s": started.elapsed().as_secs_f64() }),
        };
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        atomic_write(path, format!("{text}\n").as_bytes())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let (label, code) = match e.kind() {
                ErrorKind::Usage => ("usage", EXIT_USAGE),
                ErrorKind::Data => ("data", EXIT_DATA),
                ErrorKind::Numeric => ("numeric", EXIT_NUMERIC),
            };
            eprintln!("error ({label}): {e}");
            code
        }
    }
}

/// Long flags accepted by the subcommand named in `argv` (or the top level).
fn valid_flags(argv: &[OsString]) -> Option<Vec<String>> {
    use clap::CommandFactory;
    let root = Cli::command();
    let sub = argv
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find_map(|a| root.find_subcommand(a));
    let cmd = sub.unwrap_or(&root);
    let mut flags: Vec<String> = cmd
        .get_arguments()
        .chain(root.get_arguments().filter(|a| a.is_global_set()))
        .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
        .collect();
    flags.sort();
    flags.dedup();
    (!flags.is_empty()).then_some(flags)
}

fn gen_synth(a: GenSynthArgs) -> Result<Outcome> {
    let cfg = SynthConfig {
        n_samples: a.n_samples,
        seed: a.seed,
        visual_len: a.visual_len,
        audio_len: a.audio_len,
        conflict_strength: a.kappa,
        mode: a.mode,
        noise_sigma: a.noise_sigma,
        latent_dim: a.latent_dim,
        val_fraction: a.val_fraction,
        test_fraction: a.test_fraction,
        drift_rho: a.drift_rho,
        variability_shift: a.variability_shift,
    };
    let ds = generate(&cfg)?;
    let manifest = write_dataset(&ds, &a.out)?;
    info!("wrote {} samples to {}", ds.len(), manifest.display());
    Ok(Outcome {
        seed: Some(cfg.seed),
        config: json!(cfg),
        outputs: vec![manifest],
    })
}

fn window(a: WindowArgs) -> Result<Outcome> {
    let cfg = WindowConfig::new(a.length, a.step)?;
    let seq = parse_feature_matrix(&a.input, NUM_AUS)?;
    let windows = window_stats(seq.view(), &cfg)?;
    let mut out = WindowedSequence::au_header().join(",");
    out.push('\n');
    out.push_str(&crate::data::format_feature_matrix(windows.descriptors.view()));
    atomic_write(&a.out, out.as_bytes())?;
    Ok(Outcome {
        seed: None,
        config: json!({ "input": a.input, "window": cfg }),
        outputs: vec![a.out],
    })
}

fn load(path: &Path) -> Result<Dataset> {
    let ds = load_manifest(path)?;
    info!("loaded {} samples from {}", ds.len(), path.display());
    Ok(ds)
}

fn train_cmd(a: TrainArgs) -> Result<Outcome> {
    let vf = match a.visual {
        VisualArg::Raw => VisualFeatures::Raw,
        VisualArg::Windowed => VisualFeatures::Windowed(WindowConfig::new(
            a.window_length,
            a.window_step,
        )?),
    };
    let mut group_lr = Vec::new();
    if let Some(lr) = a.text_lr {
        group_lr.push((ParamGroup::Text, lr));
    }
    let tcfg = TrainConfig {
        epochs: a.epochs,
        base_lr: a.lr,
        group_lr,
        batch_size: a.batch_size,
        patience: (!a.no_early_stop).then_some(a.patience),
        seed: a.seed,
        ..Default::default()
    };
    tcfg.validate()?;
    let ds = load(&a.manifest)?;

    if a.fusion == FusionArg::All && a.modality.is_none() {
        return train_all(&ds, vf, &tcfg, &a);
    }
    let mcfg = match a.modality {
        Some(m) => ModelConfig::unimodal(modality(m), vf),
        None => ModelConfig::new(fusion(a.fusion), vf),
    };
    let mut outputs = Vec::new();
    train_one(&ds, &mcfg, &tcfg, &a.out, a.history.as_deref(), &mut outputs)?;
    Ok(Outcome {
        seed: Some(a.seed),
        config: json!({
            "manifest": a.manifest,
            "model": mcfg,
            "train": tcfg,
        }),
        outputs,
    })
}

fn modality(m: ModalityArg) -> Modality {
    match m {
        ModalityArg::Visual => Modality::Visual,
        ModalityArg::Audio => Modality::Audio,
        ModalityArg::Text => Modality::Text,
    }
}

fn fusion(f: FusionArg) -> Fusion {
    match f {
        FusionArg::A => Fusion::Implicit,
        FusionArg::C => Fusion::Combined,
        _ => Fusion::Divergence,
    }
}

fn train_one(
    ds: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    out: &Path,
    history: Option<&Path>,
    outputs: &mut Vec<PathBuf>,
) -> Result<crate::model::Model> {
    let outcome = train(ds, mcfg, tcfg)?;
    let meta = json!({
        "best_epoch": outcome.history.best_epoch,
        "best_val_macro_f1": outcome.history.best_val_f1(),
        "pos_weight": outcome.pos_weight,
        "train": tcfg,
    });
    checkpoint::save(&outcome.model, meta, out)?;
    outputs.push(out.to_path_buf());
    if let Some(h) = history {
        atomic_write(h, outcome.history.to_csv().as_bytes())?;
        outputs.push(h.to_path_buf());
    }
    Ok(outcome.model)
}

fn train_all(ds: &Dataset, vf: VisualFeatures, tcfg: &TrainConfig, a: &TrainArgs) -> Result<Outcome> {
    let split = ds.split(a.table_split);
    if split.is_empty() {
        return Err(Error::Config(format!(
            "comparison split {} is empty",
            a.table_split
        )));
    }
    let mut outputs = Vec::new();
    let mut table = String::from("variant,macro_f1\n");
    let mut models = Vec::new();
    for f in Fusion::ALL {
        let mcfg = ModelConfig::new(f, vf);
        let l = f.letter();
        let model = train_one(
            ds,
            &mcfg,
            tcfg,
            &a.out.join(format!("fusion-{l}.ckpt")),
            Some(&a.out.join(format!("history-{l}.csv"))),
            &mut outputs,
        )?;
        let ev = evaluate(&model, &split, tcfg.threshold)?;
        info!("{}", format_table_row(&format!("Fusion {l}"), ev.macro_f1));
        table.push_str(&format!("Fusion {l},{}\n", ev.macro_f1));
        models.push(mcfg);
    }
    let path = a.out.join("comparison.csv");
    atomic_write(&path, table.as_bytes())?;
    outputs.push(path);
    Ok(Outcome {
        seed: Some(tcfg.seed),
        config: json!({
            "manifest": a.manifest,
            "models": models,
            "train": tcfg,
            "table_split": a.table_split,
        }),
        outputs,
    })
}

fn eval_cmd(a: EvalArgs) -> Result<Outcome> {
    // checkpoint first: a missing model should fail before any data is read
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let ds = load(&a.manifest)?;
    let samples = ds.split(a.split);
    let ev = evaluate(&model, &samples, a.threshold)?;
    let c = ev.counts;
    let csv = format!(
        "variant,split,macro_f1,tp,fp,tn,fn\n{},{},{},{},{},{},{}\n",
        model.config.variant_name(),
        a.split,
        ev.macro_f1,
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    );
    let outputs = emit(a.out.as_deref(), &csv)?;
    Ok(Outcome {
        seed: None,
        config: json!({
            "checkpoint": a.checkpoint,
            "manifest": a.manifest,
            "split": a.split,
            "threshold": a.threshold,
            "model": model.config,
        }),
        outputs,
    })
}

fn analyze(a: AnalyzeArgs) -> Result<Outcome> {
    let ds = load(&a.manifest)?;
    let rows = rank_features(&ds)?;
    for r in rows.iter().take(5) {
        info!("{}", r.table_row());
    }
    let outputs = emit(a.out.as_deref(), &report_csv(&rows))?;
    Ok(Outcome {
        seed: None,
        config: json!({ "manifest": a.manifest, "alpha": crate::stats::BONFERRONI_ALPHA }),
        outputs,
    })
}

fn emit(path: Option<&Path>, text: &str) -> Result<Vec<PathBuf>> {
    match path {
        Some(p) => {
            atomic_write(p, text.as_bytes())?;
            Ok(vec![p.to_path_buf()])
        }
        None => {
            print!("{text}");
            Ok(Vec::new())
        }
    }
}
