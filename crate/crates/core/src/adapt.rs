//! The adaptation loop: fine-tune, then repeatedly profile, prune and
//! fine-tune again, keeping the best-on-validation network.
//!
//! [`step0`] and [`iterate_from`] are split so that budget sweeps and
//! ablations can branch from one shared Step-0 checkpoint.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::formats::encode_network;
use crate::layers::{LayerKind, Network};
use crate::prune::{decide_for, PruneConfig, PruneDecision, Strategy};
use crate::stats::collect_profile;
use crate::surgery::{apply_masks, count_flops, count_params, layer_widths};
use crate::tensor::{derive_seed, Rng};
use crate::train::{evaluate, fit, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Stop once validation accuracy falls more than this fraction below
    /// the best seen so far.
    pub stop_on_val_drop: Option<f64>,
    /// Stop once `params / params₀` falls below this ratio.
    pub stop_below_param_ratio: Option<f64>,
    /// Zero every wall-clock field so reports are byte-stable.
    pub deterministic: bool,
    pub stats_batch_size: usize,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub augment: AugmentConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            seed: 0,
            stop_on_val_drop: None,
            stop_below_param_ratio: None,
            deterministic: false,
            stats_batch_size: 64,
            train: TrainConfig::default(),
            prune: PruneConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prune.validate()?;
        self.augment.validate()?;
        if let Some(d) = self.stop_on_val_drop {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("stop_on_val_drop {d} outside [0,1)")));
            }
        }
        if let Some(r) = self.stop_below_param_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("stop_below_param_ratio {r} outside (0,1)")));
            }
        }
        if self.stats_batch_size == 0 {
            return Err(Error::Config("stats_batch_size must be positive".into()));
        }
        Ok(())
    }

    fn train_config(&self, iteration: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[0, iteration as u64]),
            ..self.train.clone()
        }
    }

    fn prune_rng(&self, iteration: usize) -> Rng {
        Rng::new(self.seed).derive(&[1, iteration as u64])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    ValDrop,
    ParamRatio,
    NetworkExhausted,
}

/// Per-layer outcome of one prune decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub name: String,
    pub before: usize,
    pub kept: usize,
    pub gated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub params: usize,
    pub flops: u64,
    pub widths: Vec<usize>,
    pub lr_history: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: i64,
    pub seconds: f64,
    /// SHA-256 prefix of the checkpoint this row reports.
    pub model_fingerprint: String,
    /// Checkpoint the profile was collected from (the previous row's).
    pub profiled_model: Option<String>,
    pub profile_fingerprint: Option<String>,
    pub mean_priority: Option<f64>,
    pub layers: Vec<LayerOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub seed: u64,
    pub config: AdaptConfig,
    pub layer_names: Vec<String>,
    pub rows: Vec<IterationRow>,
    pub best_iteration: usize,
    pub stop_reason: StopReason,
    /// Decisions applied at iterations 1.., in order.
    pub decisions: Vec<PruneDecision>,
}

impl AdaptReport {
    pub fn best_row(&self) -> &IterationRow {
        &self.rows[self.best_iteration]
    }

    pub fn to_json_pretty(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Outcome of the initial fine-tune, shared by branching experiments.
#[derive(Clone, Debug)]
pub struct Step0 {
    pub network: Network,
    pub row: IterationRow,
}

pub fn model_fingerprint(net: &Network) -> String {
    hex::encode(&Sha256::digest(encode_network(net, &Value::Null))[..8])
}

struct Datasets<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    test: Option<&'a Dataset>,
}

/// Fine-tunes, restores the best checkpoint and measures it.
fn fine_tune(net: &mut Network, sets: &Datasets, cfg: &AdaptConfig, iteration: usize) -> Result<IterationRow> {
    let started = Instant::now();
    let augment = cfg.augment.enabled.then_some(&cfg.augment);
    let result = fit(net, sets.train, sets.val, &cfg.train_config(iteration), augment).map_err(|e| match e {
        Error::Divergence { epoch, .. } => Error::Divergence {
            iteration: Some(iteration),
            epoch,
        },
        other => other,
    })?;
    net.set_params(result.best_params)?;
    let test_accuracy = match sets.test {
        Some(t) => Some(evaluate(net, t, cfg.train.batch_size)?.accuracy),
        None => None,
    };
    Ok(IterationRow {
        iteration,
        val_accuracy: result.best_val_accuracy,
        test_accuracy,
        params: count_params(net),
        flops: count_flops(net),
        widths: layer_widths(net).into_iter().map(|(_, w)| w).collect(),
        lr_history: result.history.iter().map(|h| h.lr).collect(),
        epochs_run: result.history.len(),
        best_epoch: result.best_epoch,
        seconds: if cfg.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        },
        model_fingerprint: model_fingerprint(net),
        profiled_model: None,
        profile_fingerprint: None,
        mean_priority: None,
        layers: Vec::new(),
    })
}

/// Swaps the classifier for a freshly initialized one with `classes`
/// outputs, keeping every other layer's weights.
pub fn replace_classifier(net: &Network, classes: usize, rng: &mut Rng) -> Result<Network> {
    let ci = net
        .classifier_index()
        .ok_or_else(|| Error::ShapeMismatch("network has no classifier layer".into()))?;
    let mut specs = net.specs().to_vec();
    match &mut specs[ci].kind {
        LayerKind::Dense { out_features, .. } => *out_features = classes,
        LayerKind::Conv2d { out_channels, .. } => *out_channels = classes,
        _ => unreachable!("classifier is parameterized"),
    }
    let fresh = Network::new(specs.clone(), net.input_shape(), rng)?;
    let mut params = net.params().to_vec();
    params[ci] = fresh.params()[ci].clone();
    let mut out = Network::from_params(specs, net.input_shape(), params)?;
    out.set_mode(net.mode());
    Ok(out)
}

/// Step 0: fine-tunes the starting network on the target task.
pub fn step0(net: Network, train: &Dataset, val: &Dataset, test: Option<&Dataset>, cfg: &AdaptConfig) -> Result<Step0> {
    cfg.validate()?;
    let mut network = net;
    let sets = Datasets { train, val, test };
    let row = fine_tune(&mut network, &sets, cfg, 0)?;
    Ok(Step0 { network, row })
}

/// Runs the pruning iterations starting from a Step-0 checkpoint.
///
/// With `references`, iteration `i` uses `references[i-1]` as the
/// count-matching reference and the run lasts exactly `references.len()`
/// iterations with the early stops disabled.
pub fn iterate_from(
    start: &Step0,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &AdaptConfig,
    references: Option<&[PruneDecision]>,
) -> Result<(AdaptReport, Network)> {
    iterate_observed(start, train, val, test, cfg, references, &mut |_, _| Ok(()))
}

/// [`iterate_from`], calling `observe` with each iteration's row and
/// fine-tuned checkpoint.
pub fn iterate_observed(
    start: &Step0,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &AdaptConfig,
    references: Option<&[PruneDecision]>,
    observe: &mut dyn FnMut(&IterationRow, &Network) -> Result<()>,
) -> Result<(AdaptReport, Network)> {
    cfg.validate()?;
    if cfg.prune.strategy == Strategy::CountMatchedRandom && references.is_none() {
        return Err(Error::Config("count_matched_random needs a reference run".into()));
    }
    let sets = Datasets { train, val, test };
    let iterations = references.map_or(cfg.iterations, <[_]>::len);
    let mut net = start.network.clone();
    let mut rows = vec![start.row.clone()];
    let mut decisions = Vec::new();
    let mut best = (0usize, start.network.clone());
    let mut stop_reason = StopReason::Completed;
    let params0 = start.row.params as f64;

    for iteration in 1..=iterations {
        let started = Instant::now();
        let profiled_model = rows.last().unwrap().model_fingerprint.clone();
        let profile = collect_profile(&net, train, cfg.stats_batch_size)?;
        let reference = references.map(|r| &r[iteration - 1]);
        let decision = decide_for(&net, &profile, &cfg.prune, &mut cfg.prune_rng(iteration), reference)?;
        let pruned = match apply_masks(&net, &decision) {
            Ok((pruned, _)) => pruned,
            Err(Error::FloorViolation { .. }) => {
                stop_reason = StopReason::NetworkExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        net = pruned;
        let mut row = fine_tune(&mut net, &sets, cfg, iteration)?;
        if !cfg.deterministic {
            row.seconds = started.elapsed().as_secs_f64();
        }
        row.profiled_model = Some(profiled_model);
        row.profile_fingerprint = Some(decision.profile_fingerprint.clone());
        row.mean_priority = decision.mean_priority.is_finite().then_some(decision.mean_priority);
        row.layers = decision
            .layers
            .iter()
            .map(|l| LayerOutcome {
                name: l.name.clone(),
                before: l.width,
                kept: l.kept,
                gated: l.gated,
            })
            .collect();

        if row.val_accuracy > rows[best.0].val_accuracy {
            best = (iteration, net.clone());
        }
        let running_best = rows.iter().map(|r| r.val_accuracy).fold(row.val_accuracy, f64::max);
        let val_drop = cfg
            .stop_on_val_drop
            .is_some_and(|tol| row.val_accuracy < running_best * (1.0 - tol));
        let small = cfg
            .stop_below_param_ratio
            .is_some_and(|r| (row.params as f64) / params0 < r);
        observe(&row, &net)?;
        rows.push(row);
        decisions.push(decision);
        if references.is_none() {
            if val_drop {
                stop_reason = StopReason::ValDrop;
                break;
            }
            if small {
                stop_reason = StopReason::ParamRatio;
                break;
            }
        }
    }

    let report = AdaptReport {
        seed: cfg.seed,
        config: cfg.clone(),
        layer_names: layer_widths(&start.network).into_iter().map(|(n, _)| n).collect(),
        rows,
        best_iteration: best.0,
        stop_reason,
        decisions,
    };
    Ok((report, best.1))
}

/// Step 0 followed by the configured pruning iterations.
pub fn run(
    net: Network,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &AdaptConfig,
) -> Result<(AdaptReport, Network)> {
    let start = step0(net, train, val, test, cfg)?;
    iterate_from(&start, train, val, test, cfg, None)
}

/// Independent runs per prune budget, all branching from `start`.
pub fn sweep_budgets(
    start: &Step0,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &AdaptConfig,
    budgets: &[f64],
) -> Result<Vec<(AdaptReport, Network)>> {
    for &b in budgets {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::Config(format!("prune budget {b} outside (0,1)")));
        }
    }
    budgets
        .par_iter()
        .enumerate()
        .map(|(i, &b)| {
            let branch = AdaptConfig {
                seed: derive_seed(cfg.seed, &[2, i as u64]),
                prune: PruneConfig {
                    keep_threshold: 1.0 - b,
                    ..cfg.prune.clone()
                },
                ..cfg.clone()
            };
            iterate_from(start, train, val, test, &branch, None)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    UniformRandomVsLeast,
    CountMatched,
}

pub const ABLATION_SEEDS: usize = 5;
pub const ABLATION_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub report: AdaptReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    /// Mean over runs of the final iteration's validation accuracy.
    pub mean_val_accuracy: f64,
    pub mean_test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub mode: AblationMode,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<StrategySummary>,
}

fn summarize(runs: &[AblationRun]) -> Vec<StrategySummary> {
    let mut order: Vec<Strategy> = Vec::new();
    for r in runs {
        if !order.contains(&r.strategy) {
            order.push(r.strategy);
        }
    }
    order
        .into_iter()
        .map(|strategy| {
            let last: Vec<&IterationRow> = runs
                .iter()
                .filter(|r| r.strategy == strategy)
                .map(|r| r.report.rows.last().unwrap())
                .collect();
            let n = last.len() as f64;
            let tests: Option<Vec<f64>> = last.iter().map(|r| r.test_accuracy).collect();
            StrategySummary {
                strategy,
                runs: last.len(),
                mean_val_accuracy: last.iter().map(|r| r.val_accuracy).sum::<f64>() / n,
                mean_test_accuracy: tests.map(|t| t.iter().sum::<f64>() / n),
            }
        })
        .collect()
}

/// Ablation baselines branching from `start`.
///
/// `UniformRandomVsLeast` runs one pruning iteration at fraction 0.1 for
/// five seeds under both uniform strategies. `CountMatched` runs the
/// configured prune-budget schedule, then a random run that removes the
/// same number of filters per layer at every iteration.
pub fn run_ablation(
    start: &Step0,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &AdaptConfig,
    mode: AblationMode,
) -> Result<AblationResult> {
    let runs = match mode {
        AblationMode::UniformRandomVsLeast => {
            let jobs: Vec<(Strategy, u64)> = [Strategy::UniformRandom, Strategy::UniformLeastActivated]
                .into_iter()
                .flat_map(|s| (0..ABLATION_SEEDS as u64).map(move |k| (s, k)))
                .collect();
            jobs.par_iter()
                .map(|&(strategy, k)| {
                    let branch = AdaptConfig {
                        iterations: 1,
                        seed: derive_seed(cfg.seed, &[3, k]),
                        prune: PruneConfig {
                            strategy,
                            uniform_fraction: ABLATION_FRACTION,
                            ..cfg.prune.clone()
                        },
                        ..cfg.clone()
                    };
                    let (report, _) = iterate_from(start, train, val, test, &branch, None)?;
                    Ok(AblationRun {
                        strategy,
                        seed: branch.seed,
                        report,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        AblationMode::CountMatched => {
            let nwa_cfg = AdaptConfig {
                prune: PruneConfig {
                    strategy: Strategy::Nwa,
                    ..cfg.prune.clone()
                },
                ..cfg.clone()
            };
            let (nwa, _) = iterate_from(start, train, val, test, &nwa_cfg, None)?;
            let matched_cfg = AdaptConfig {
                seed: derive_seed(cfg.seed, &[4]),
                prune: PruneConfig {
                    strategy: Strategy::CountMatchedRandom,
                    ..cfg.prune.clone()
                },
                ..cfg.clone()
            };
            let (matched, _) = iterate_from(start, train, val, test, &matched_cfg, Some(&nwa.decisions))?;
            vec![
                AblationRun {
                    strategy: Strategy::Nwa,
                    seed: nwa_cfg.seed,
                    report: nwa,
                },
                AblationRun {
                    strategy: Strategy::CountMatchedRandom,
                    seed: matched_cfg.seed,
                    report: matched,
                },
            ]
        }
    };
    Ok(AblationResult {
        mode,
        summary: summarize(&runs),
        runs,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// `iteration,val_acc,test_acc,params,flops,params_ratio,flops_ratio`, with
/// ratios relative to iteration 0.
pub fn curves_csv(report: &AdaptReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "val_acc", "test_acc", "params", "flops", "params_ratio", "flops_ratio"])
        .map_err(csv_error)?;
    let first = &report.rows[0];
    for r in &report.rows {
        w.write_record([
            r.iteration.to_string(),
            r.val_accuracy.to_string(),
            r.test_accuracy.map(|t| t.to_string()).unwrap_or_default(),
            r.params.to_string(),
            r.flops.to_string(),
            (r.params as f64 / first.params as f64).to_string(),
            (r.flops as f64 / first.flops as f64).to_string(),
        ])
        .map_err(csv_error)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
}

/// One row per iteration, one column per conv/dense layer.
pub fn widths_csv(report: &AdaptReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iteration".to_string()];
    header.extend(report.layer_names.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for r in &report.rows {
        let mut rec = vec![r.iteration.to_string()];
        rec.extend(r.widths.iter().map(usize::to_string));
        w.write_record(&rec).map_err(csv_error)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
}

/// Writes `report.json`, `curves.csv` and `widths.csv` into `dir`.
pub fn write_report(dir: &Path, report: &AdaptReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_file(&dir.join("report.json"), report.to_json_pretty().as_bytes())?;
    write_file(&dir.join("curves.csv"), curves_csv(report)?.as_bytes())?;
    write_file(&dir.join("widths.csv"), widths_csv(report)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<AdaptReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
