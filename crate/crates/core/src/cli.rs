//! Command-line front end. Every subcommand validates its flags, config and
//! inputs before writing anything, then records a `run_manifest.json` in
//! its output directory before starting work.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adapt::{
    self, replace_classifier, write_report, AblationMode, AdaptConfig, AdaptReport,
};
use crate::data::{load_dataset, save_dataset, ten_crop_predict, AugmentConfig, Dataset, Split, MANIFEST_FILE};
use crate::desk;
use crate::error::{Error, Result};
use crate::formats::{load_network, save_network};
use crate::layers::Network;
use crate::prune::{decide_for, PruneConfig, PruneDecision};
use crate::stats::collect_profile;
use crate::surgery::apply_masks;
use crate::tensor::Rng;
use crate::train::{argmax_rows, evaluate, fit, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "NWADAPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nwadapt", version, about = "Target-aware network adaptation by iterative filter pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON config with optional `train`, `prune`, `augment`, `adapt` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Zero timestamps and wall-clock fields so outputs are byte-stable.
    #[arg(long)]
    pub deterministic: bool,
    /// Base settings before the config file is applied.
    #[arg(long, value_enum, default_value_t = Preset::Standard)]
    pub preset: Preset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Fine-tuning schedule for a pretrained network.
    Standard,
    /// Faster schedule for the small synthetic task trained from scratch.
    Desk,
}

#[derive(Debug, Clone, Args)]
pub struct ModelInput {
    /// Dataset directory containing `manifest.json`.
    #[arg(long)]
    pub data: PathBuf,
    /// NWAD model; a fresh small CNN sized to the dataset when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PruneFlags {
    /// Tail activation mass marked for removal (1 − keep threshold).
    #[arg(long)]
    pub prune_budget: Option<f64>,
    /// Comma-separated layers that are never pruned.
    #[arg(long, value_delimiter = ',')]
    pub exclude_layers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Uniform,
    CountMatched,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic shape dataset with train/val/test splits.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = desk::CLASSES)]
        classes: usize,
        #[arg(long, default_value_t = desk::PER_CLASS)]
        per_class: usize,
        #[arg(long, default_value_t = desk::TEST_PER_CLASS)]
        test_per_class: usize,
        #[arg(long, default_value_t = desk::IMAGE_HW)]
        hw: usize,
    },
    /// Step 0 only: fine-tune a model on the target task.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
    },
    /// Step 0 followed by iterative pruning and fine-tuning.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        prune: PruneFlags,
        /// Pruning iterations after Step 0 (overrides the config).
        #[arg(long)]
        iterations: Option<usize>,
        /// Also save the checkpoint of every iteration.
        #[arg(long)]
        keep_snapshots: bool,
    },
    /// One profile, decision and surgery without retraining.
    PruneOnce {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        prune: PruneFlags,
        /// Apply this decision JSON instead of computing one.
        #[arg(long, conflicts_with_all = ["prune_budget", "exclude_layers"])]
        decision: Option<PathBuf>,
    },
    /// Write the activation profile of a model over the training split.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
    },
    /// Single-crop and ten-crop accuracy on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Ten-crop window size in pixels; 7/8 of the image by default.
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Independent adaptation runs per prune budget from one Step 0.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
        #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.05, 0.10])]
        budgets: Vec<f64>,
        /// Pruning iterations after Step 0 (overrides the config).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Random and uniform pruning baselines.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ModelInput,
        #[arg(long, value_enum)]
        mode: AblationArg,
        #[command(flatten)]
        prune: PruneFlags,
        /// Pruning iterations after Step 0 (overrides the config).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Plot-ready CSV and Markdown tables from one or more report.json files.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Finetune { common, .. }
            | Command::Adapt { common, .. }
            | Command::PruneOnce { common, .. }
            | Command::Stats { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::Ablation { common, .. }
            | Command::Report { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Finetune { .. } => "finetune",
            Command::Adapt { .. } => "adapt",
            Command::PruneOnce { .. } => "prune-once",
            Command::Stats { .. } => "stats",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Ablation { .. } => "ablation",
            Command::Report { .. } => "report",
        }
    }
}

/// Non-`train`/`prune`/`augment` settings of the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub iterations: Option<usize>,
    pub stop_on_val_drop: Option<f64>,
    pub stop_below_param_ratio: Option<f64>,
    pub stats_batch_size: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub train: Option<Value>,
    pub prune: Option<Value>,
    pub augment: Option<Value>,
    pub adapt: Option<AdaptSection>,
}

/// Overlays the keys of `patch` onto the serialized `base`.
fn overlay<T: Serialize + DeserializeOwned + Clone>(base: &T, patch: Option<&Value>, section: &str) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(base.clone());
    };
    let patch = patch
        .as_object()
        .ok_or_else(|| Error::Config(format!("config section {section} must be an object")))?;
    let mut merged = serde_json::to_value(base).expect("config serializes");
    for (k, v) in patch {
        merged[k] = v.clone();
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("config section {section}: {e}")))
}

/// Effective settings: preset, then config file, then flags.
pub fn resolve_config(common: &Common) -> Result<AdaptConfig> {
    let mut cfg = match common.preset {
        Preset::Standard => AdaptConfig::default(),
        Preset::Desk => desk::adapt_config(common.seed),
    };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let file: ConfigFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.train = overlay::<TrainConfig>(&cfg.train, file.train.as_ref(), "train")?;
        cfg.prune = overlay::<PruneConfig>(&cfg.prune, file.prune.as_ref(), "prune")?;
        cfg.augment = overlay::<AugmentConfig>(&cfg.augment, file.augment.as_ref(), "augment")?;
        if let Some(a) = file.adapt {
            cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
            cfg.stop_on_val_drop = a.stop_on_val_drop.or(cfg.stop_on_val_drop);
            cfg.stop_below_param_ratio = a.stop_below_param_ratio.or(cfg.stop_below_param_ratio);
            cfg.stats_batch_size = a.stats_batch_size.unwrap_or(cfg.stats_batch_size);
        }
    }
    cfg.seed = common.seed;
    cfg.train.seed = common.seed;
    cfg.deterministic = common.deterministic;
    Ok(cfg)
}

fn apply_prune_flags(cfg: &mut AdaptConfig, flags: &PruneFlags) -> Result<()> {
    if let Some(b) = flags.prune_budget {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::Config(format!("--prune-budget {b} outside (0,1)")));
        }
        cfg.prune.keep_threshold = 1.0 - b;
    }
    cfg.prune.excluded_layers.extend(flags.exclude_layers.iter().cloned());
    Ok(())
}

fn check_excluded(net: &Network, cfg: &AdaptConfig) -> Result<()> {
    let prunable: Vec<&str> = net.prunable_layers().iter().map(|&i| net.specs()[i].name.as_str()).collect();
    for name in &cfg.prune.excluded_layers {
        if !prunable.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "excluded layer {name} is not prunable (prunable: {})",
                prunable.join(",")
            )));
        }
    }
    Ok(())
}

struct Inputs {
    data: Dataset,
    network: Network,
    hashes: Value,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn load_inputs(input: &ModelInput, seed: u64) -> Result<Inputs> {
    let data = load_dataset(&input.data)?;
    let shape = data
        .image_shape()
        .ok_or_else(|| Error::Data(format!("{} holds no samples", input.data.display())))?
        .to_vec();
    let mut hashes = json!({ "dataset_manifest": file_hash(&input.data.join(MANIFEST_FILE))? });
    let network = match &input.model {
        Some(path) => {
            hashes["model"] = json!(file_hash(path)?);
            let net = load_network(path)?.network;
            if net.input_shape() != shape.as_slice() {
                return Err(Error::Data(format!(
                    "model expects input {:?}, dataset images are {:?}",
                    net.input_shape(),
                    shape
                )));
            }
            if net.num_classes() != data.num_classes() {
                replace_classifier(&net, data.num_classes(), &mut Rng::new(seed).derive(&[9]))?
            } else {
                net
            }
        }
        None => {
            if shape[1] != shape[2] {
                return Err(Error::Data(format!("default network needs square images, got {shape:?}")));
            }
            desk::network(data.num_classes(), shape[1], seed)?
        }
    };
    Ok(Inputs { data, network, hashes })
}

fn timestamp(deterministic: bool) -> u64 {
    if deterministic {
        0
    } else {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

fn model_metadata(deterministic: bool) -> Value {
    json!({ "tool": "nwadapt", "version": VERSION, "created_unix": timestamp(deterministic) })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_manifest(common: &Common, argv: &[String], command: &str, cfg: &AdaptConfig, hashes: &Value) -> Result<()> {
    create_dir(&common.out)?;
    write_json(
        &common.out.join("run_manifest.json"),
        &json!({
            "tool": "nwadapt",
            "version": VERSION,
            "command": command,
            "argv": argv,
            "seed": common.seed,
            "deterministic": common.deterministic,
            "created_unix": timestamp(common.deterministic),
            "config": cfg,
            "inputs": hashes,
        }),
    )
}

fn split(data: &Dataset, s: Split) -> Dataset {
    data.with_split(s)
}

fn nonempty(ds: Dataset, what: &str) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::Data(format!("dataset has no {what} samples")));
    }
    Ok(ds)
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Option<Dataset>,
}

fn splits(data: &Dataset) -> Result<Splits> {
    let test = split(data, Split::Test);
    Ok(Splits {
        train: nonempty(split(data, Split::Train), "train")?,
        val: nonempty(split(data, Split::Val), "val")?,
        test: (!test.is_empty()).then_some(test),
    })
}

/// Runs one parsed command line.
pub fn execute(cli: Cli, argv: &[String]) -> Result<()> {
    let common = cli.command.common().clone();
    let name = cli.command.name();
    let mut cfg = resolve_config(&common)?;
    cfg.validate()?;
    match cli.command {
        Command::Synth {
            classes,
            per_class,
            test_per_class,
            hw,
            ..
        } => {
            let data = desk::dataset(classes, per_class, test_per_class, hw, common.seed)?;
            write_manifest(&common, argv, name, &cfg, &json!({}))?;
            save_dataset(&data, &common.out)
        }
        Command::Finetune { input, .. } => {
            let inputs = load_inputs(&input, common.seed)?;
            let s = splits(&inputs.data)?;
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let mut net = inputs.network;
            let augment = cfg.augment.enabled.then_some(&cfg.augment);
            let result = fit(&mut net, &s.train, &s.val, &cfg.train, augment)?;
            net.set_params(result.best_params.clone())?;
            save_network(&common.out.join("model.nwad"), &net, &model_metadata(common.deterministic))?;
            let test = match &s.test {
                Some(t) => Some(evaluate(&net, t, cfg.train.batch_size)?.accuracy),
                None => None,
            };
            write_json(
                &common.out.join("fit.json"),
                &json!({
                    "best_val_accuracy": result.best_val_accuracy,
                    "best_epoch": result.best_epoch,
                    "test_accuracy": test,
                    "history": result.history,
                }),
            )
        }
        Command::Adapt {
            input,
            prune,
            iterations,
            keep_snapshots,
            ..
        } => {
            apply_prune_flags(&mut cfg, &prune)?;
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.validate()?;
            let inputs = load_inputs(&input, common.seed)?;
            check_excluded(&inputs.network, &cfg)?;
            let s = splits(&inputs.data)?;
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let meta = model_metadata(common.deterministic);
            let snapshots = common.out.join("snapshots");
            if keep_snapshots {
                create_dir(&snapshots)?;
            }
            let mut save_snapshot = |row: &adapt::IterationRow, net: &Network| {
                if keep_snapshots {
                    save_network(&snapshots.join(format!("iter_{:02}.nwad", row.iteration)), net, &meta)?;
                }
                Ok(())
            };
            let start = adapt::step0(inputs.network, &s.train, &s.val, s.test.as_ref(), &cfg)?;
            save_snapshot(&start.row, &start.network)?;
            let (report, best) =
                adapt::iterate_observed(&start, &s.train, &s.val, s.test.as_ref(), &cfg, None, &mut save_snapshot)?;
            write_report(&common.out, &report)?;
            save_network(&common.out.join("best_model.nwad"), &best, &meta)
        }
        Command::PruneOnce {
            input,
            prune,
            decision,
            ..
        } => {
            apply_prune_flags(&mut cfg, &prune)?;
            cfg.validate()?;
            let inputs = load_inputs(&input, common.seed)?;
            check_excluded(&inputs.network, &cfg)?;
            let given: Option<PruneDecision> = match &decision {
                Some(p) => {
                    let text =
                        fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                    Some(serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?)
                }
                None => None,
            };
            let train = nonempty(split(&inputs.data, Split::Train), "train")?;
            let metadata = match &input.model {
                Some(p) => {
                    let mut m = load_network(p)?.metadata;
                    if let Some(obj) = m.as_object_mut() {
                        obj.insert("created_unix".into(), json!(timestamp(common.deterministic)));
                    }
                    m
                }
                None => model_metadata(common.deterministic),
            };
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let decision = match given {
                Some(d) => d,
                None => {
                    let profile = collect_profile(&inputs.network, &train, cfg.stats_batch_size)?;
                    decide_for(
                        &inputs.network,
                        &profile,
                        &cfg.prune,
                        &mut Rng::new(common.seed).derive(&[1, 1]),
                        None,
                    )?
                }
            };
            let (pruned, delta) = apply_masks(&inputs.network, &decision)?;
            write_json(&common.out.join("decision.json"), &decision)?;
            write_json(&common.out.join("arch_delta.json"), &delta)?;
            save_network(&common.out.join("pruned.nwad"), &pruned, &metadata)
        }
        Command::Stats { input, .. } => {
            let inputs = load_inputs(&input, common.seed)?;
            let train = nonempty(split(&inputs.data, Split::Train), "train")?;
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let profile = collect_profile(&inputs.network, &train, cfg.stats_batch_size)?;
            write_json(&common.out.join("profile.json"), &profile.to_json())
        }
        Command::Eval {
            input, split: which, crop, ..
        } => {
            let inputs = load_inputs(&input, common.seed)?;
            let ds = nonempty(split(&inputs.data, which.into()), "selected")?;
            let hw = inputs.network.input_shape()[1];
            let crop = crop.unwrap_or(hw - hw / 8);
            if crop == 0 || crop > hw {
                return Err(Error::Config(format!("--crop {crop} must be in 1..={hw}")));
            }
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let single = evaluate(&inputs.network, &ds, cfg.train.batch_size)?;
            let mut correct = 0usize;
            for i in 0..ds.len() {
                let probs = ten_crop_predict(&inputs.network, &ds.input(i), crop)?;
                let row = crate::Tensor::from_vec(&[1, probs.len()], probs)?;
                correct += usize::from(argmax_rows(&row)[0] == ds.label(i));
            }
            write_json(
                &common.out.join("eval.json"),
                &json!({
                    "split": ds.samples()[0].split,
                    "samples": ds.len(),
                    "loss": single.loss,
                    "single_crop_accuracy": single.accuracy,
                    "ten_crop_accuracy": correct as f64 / ds.len() as f64,
                    "crop": crop,
                }),
            )
        }
        Command::Sweep {
            input,
            budgets,
            iterations,
            ..
        } => {
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            for &b in &budgets {
                if !(b > 0.0 && b < 1.0) {
                    return Err(Error::Config(format!("budget {b} outside (0,1)")));
                }
            }
            let inputs = load_inputs(&input, common.seed)?;
            let s = splits(&inputs.data)?;
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let start = adapt::step0(inputs.network, &s.train, &s.val, s.test.as_ref(), &cfg)?;
            let meta = model_metadata(common.deterministic);
            save_network(&common.out.join("step0.nwad"), &start.network, &meta)?;
            let runs = adapt::sweep_budgets(&start, &s.train, &s.val, s.test.as_ref(), &cfg, &budgets)?;
            let mut summary = Vec::new();
            for (b, (report, best)) in budgets.iter().zip(&runs) {
                let dir = common.out.join(format!("budget_{b}"));
                write_report(&dir, report)?;
                save_network(&dir.join("best_model.nwad"), best, &meta)?;
                summary.push(budget_summary(*b, report));
            }
            write_json(&common.out.join("sweep_summary.json"), &summary)
        }
        Command::Ablation {
            input,
            mode,
            prune,
            iterations,
            ..
        } => {
            apply_prune_flags(&mut cfg, &prune)?;
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.validate()?;
            let inputs = load_inputs(&input, common.seed)?;
            check_excluded(&inputs.network, &cfg)?;
            let s = splits(&inputs.data)?;
            write_manifest(&common, argv, name, &cfg, &inputs.hashes)?;
            let start = adapt::step0(inputs.network, &s.train, &s.val, s.test.as_ref(), &cfg)?;
            let mode = match mode {
                AblationArg::Uniform => AblationMode::UniformRandomVsLeast,
                AblationArg::CountMatched => AblationMode::CountMatched,
            };
            let result = adapt::run_ablation(&start, &s.train, &s.val, s.test.as_ref(), &cfg, mode)?;
            for (i, run) in result.runs.iter().enumerate() {
                let tag = serde_json::to_value(run.strategy).unwrap();
                write_report(&common.out.join(format!("run_{i:02}_{}", tag.as_str().unwrap())), &run.report)?;
            }
            write_json(&common.out.join("ablation.json"), &json!({ "mode": result.mode, "summary": result.summary }))
        }
        Command::Report { reports, .. } => {
            let loaded: Vec<(PathBuf, AdaptReport)> = reports
                .iter()
                .map(|p| adapt::read_report(p).map(|r| (p.clone(), r)))
                .collect::<Result<_>>()?;
            write_manifest(&common, argv, name, &cfg, &json!({}))?;
            let mut md = String::new();
            for (i, (path, report)) in loaded.iter().enumerate() {
                let dir = if loaded.len() == 1 {
                    common.out.clone()
                } else {
                    common.out.join(format!("report_{i:02}"))
                };
                create_dir(&dir)?;
                write_text(&dir.join("curves.csv"), &adapt::curves_csv(report)?)?;
                write_text(&dir.join("widths.csv"), &adapt::widths_csv(report)?)?;
                md.push_str(&markdown_summary(path, report));
            }
            write_text(&common.out.join("summary.md"), &md)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn budget_summary(budget: f64, report: &AdaptReport) -> Value {
    let first = &report.rows[0];
    let best = report.best_row();
    let last = report.rows.last().unwrap();
    json!({
        "budget": budget,
        "iterations_run": report.rows.len() - 1,
        "best_iteration": report.best_iteration,
        "best_val_accuracy": best.val_accuracy,
        "best_test_accuracy": best.test_accuracy,
        "final_params_ratio": last.params as f64 / first.params as f64,
        "final_flops_ratio": last.flops as f64 / first.flops as f64,
        "stop_reason": report.stop_reason,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn markdown_summary(path: &Path, report: &AdaptReport) -> String {
    let first = &report.rows[0];
    let mut md = format!(
        "## {}\n\nbest iteration: {}, stop: {}\n\n| iter | val % | test % | params | params ratio | FLOPs ratio | widths |\n|---:|---:|---:|---:|---:|---:|---|\n",
        path.display(),
        report.best_iteration,
        serde_json::to_value(report.stop_reason).unwrap().as_str().unwrap()
    );
    for r in &report.rows {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {} |\n",
            r.iteration,
            pct(r.val_accuracy),
            r.test_accuracy.map(pct).unwrap_or_else(|| "-".into()),
            r.params,
            r.params as f64 / first.params as f64,
            r.flops as f64 / first.flops as f64,
            r.widths.iter().map(usize::to_string).collect::<Vec<_>>().join("/"),
        ));
    }
    md.push('\n');
    md
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A second call in the same process finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print one JSON object on stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim(), 2));
            return 2;
        }
    };
    let outcome = configure_threads().and_then(|_| execute(cli, &argv));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}
