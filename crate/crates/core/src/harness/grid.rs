//! The benchmark grid: {SISA, SISA++} x {shard counts} x {users removed},
//! evaluated before and after unlearning on a held-out split.
//!
//! Each cell trains (or reuses) a run, performs the removal condition, and
//! reports the task's metric pair plus the cost ledger. Output is one
//! key-value file per cell and a combined fixed-width table; everything is
//! seeded, so a rerun with the same inputs reproduces the output tree byte
//! for byte. Absolute scores depend entirely on the synthetic data; the
//! point of the grid is the structural comparison, and the per-cell delta
//! against the matching before-cell is reported alongside.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregationMode, EnsembleModel, Prediction};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::metrics::{accuracy, macro_f1, mae, rmse};
use crate::manifest::{join_list, Manifest};
use crate::model::{forward_passes_on_thread, ArchDescriptor, TaskKind};
use crate::rng::{RngPath, RngStream};
use crate::run::{Generation, Run};
use crate::sharding::{make_shard_plan, PlanMode, ShardPlan, UnlearnRequest};
use crate::trainer::{parse_activation, TrainConfig};
use crate::unlearn::{execute_unlearn, CostLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Sisa,
    SisaPlusPlus,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Sisa, Method::SisaPlusPlus];

    pub fn slug(&self) -> &'static str {
        match self {
            Method::Sisa => "sisa",
            Method::SisaPlusPlus => "sisapp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sisa => "SISA",
            Method::SisaPlusPlus => "SISA++",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Before,
    After,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Before => "before",
            Phase::After => "after",
        })
    }
}

/// Grid configuration, loadable from TOML. Defaults reproduce the standard
/// comparison: 4 and 8 shards, 1 and 2 users removed, 80:20 split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub shard_counts: Vec<usize>,
    pub users_removed: Vec<usize>,
    pub slices: usize,
    pub split_ratio: f64,
    pub seed: u64,
    /// K-groups run in parallel up to this worker count; 1 = sequential.
    pub workers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden_dims: Vec<usize>,
    pub activation: String,
    pub shared_init: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            shard_counts: vec![4, 8],
            users_removed: vec![1, 2],
            slices: 2,
            split_ratio: 0.8,
            seed: 7,
            workers: 1,
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden_dims: vec![128],
            activation: "relu".into(),
            shared_init: true,
        }
    }
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    fn train_config(&self, dataset: &Dataset) -> Result<TrainConfig> {
        let arch = ArchDescriptor::new(
            dataset.feature_dim(),
            self.hidden_dims.clone(),
            dataset.task(),
            parse_activation(&self.activation)?,
        )?;
        let mut cfg = TrainConfig::new(arch, self.seed);
        cfg.epochs_total = self.epochs;
        cfg.lr = self.lr;
        cfg.batch_size = self.batch_size;
        cfg.beta1 = self.beta1;
        cfg.beta2 = self.beta2;
        cfg.epsilon = self.epsilon;
        cfg.shared_init = self.shared_init;
        Ok(cfg)
    }
}

/// One grid cell's labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellLabel {
    pub shards: usize,
    pub method: Method,
    pub users_removed: usize,
    pub phase: Phase,
}

impl CellLabel {
    pub fn file_name(&self) -> String {
        match self.phase {
            Phase::Before => format!("{}_k{}_before.txt", self.method.slug(), self.shards),
            Phase::After => format!(
                "{}_k{}_u{}_after.txt",
                self.method.slug(),
                self.shards,
                self.users_removed
            ),
        }
    }
}

/// Metrics and accounting for one evaluated cell.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub label: CellLabel,
    pub task: TaskKind,
    /// accuracy (classification) or MAE (regression)
    pub metric_a: f64,
    /// macro-F1 (classification) or RMSE (regression)
    pub metric_b: f64,
    pub ledger: Option<CostLedger>,
    pub removed_users: Vec<String>,
    pub seed: u64,
    pub eval_queries: u64,
    pub eval_forward_passes: u64,
}

impl EvalReport {
    pub fn metric_names(&self) -> (&'static str, &'static str) {
        match self.task {
            TaskKind::Classification { .. } => ("accuracy", "macro_f1"),
            TaskKind::Regression => ("mae", "rmse"),
        }
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("method", self.label.method);
        m.set("shards", self.label.shards);
        m.set("users_removed", self.label.users_removed);
        m.set("phase", self.label.phase);
        m.set(
            "task",
            match self.task {
                TaskKind::Classification { .. } => "classification",
                TaskKind::Regression => "regression",
            },
        );
        let (name_a, name_b) = self.metric_names();
        m.set(name_a, self.metric_a);
        m.set(name_b, self.metric_b);
        m.set("removed_users", join_list(self.removed_users.iter()));
        m.set("seed", self.seed);
        m.set("eval_queries", self.eval_queries);
        m.set("eval_forward_passes", self.eval_forward_passes);
        if let Some(ledger) = &self.ledger {
            m.set("shards_retrained", ledger.shards_retrained);
            m.set("stages_executed", ledger.stages_executed);
            m.set("optimizer_steps_executed", ledger.optimizer_steps_executed);
            m.set(
                "optimizer_steps_full_retrain_baseline",
                ledger.optimizer_steps_full_retrain_baseline,
            );
            m.set("savings_ratio", ledger.savings_ratio);
        }
        m
    }
}

/// A cell either evaluated to a report or failed with a recorded reason;
/// one cell failing does not stop the rest of the grid.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub label: CellLabel,
    pub result: std::result::Result<EvalReport, String>,
}

#[derive(Debug)]
pub struct GridOutput {
    pub cells: Vec<CellOutcome>,
    pub summary_path: PathBuf,
}

impl GridOutput {
    pub fn reports(&self) -> impl Iterator<Item = &EvalReport> {
        self.cells.iter().filter_map(|c| c.result.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&CellLabel, &String)> {
        self.cells
            .iter()
            .filter_map(|c| c.result.as_ref().err().map(|e| (&c.label, e)))
    }
}

/// Seeded shuffle split preserving original point order inside each side.
pub fn split_dataset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio {ratio} must be in (0, 1)"
        )));
    }
    let n = dataset.len();
    let n_train = ((n as f64) * ratio).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidConfig(format!(
            "split of {n} points at ratio {ratio} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(RngPath::purpose(seed, "split")).shuffle(&mut order);
    let train_ids: BTreeSet<u64> = order[..n_train]
        .iter()
        .map(|&i| dataset.points()[i].point_id)
        .collect();
    let test_ids: BTreeSet<u64> = order[n_train..]
        .iter()
        .map(|&i| dataset.points()[i].point_id)
        .collect();
    Ok((dataset.subset(&train_ids)?, dataset.subset(&test_ids)?))
}

/// Deterministic removal condition: the lexicographically first users whose
/// shards are pairwise distinct, mirroring "one user from a single shard"
/// and "two users from two different shards".
fn select_removal_users(train: &Dataset, plan: &ShardPlan, count: usize) -> Result<Vec<String>> {
    let mut users = train.user_ids();
    users.sort();
    let mut chosen = Vec::new();
    let mut shards = BTreeSet::new();
    for user in users {
        let shard = plan
            .shard_of_user(&user)
            .ok_or_else(|| Error::UnknownUserId(user.clone()))?;
        if shards.insert(shard) {
            chosen.push(user);
            if chosen.len() == count {
                return Ok(chosen);
            }
        }
    }
    Err(Error::InvalidRequest(format!(
        "cannot pick {count} users in distinct shards (plan uses {} shards)",
        plan.k
    )))
}

/// Evaluates one (method, generation) on the test set, counting forward
/// passes on this thread. SISA aggregates by vote (classification) or mean
/// (regression); SISA++ answers from the generation's cached merged model.
fn evaluate_method(
    run: &Run,
    gen: &Generation,
    method: Method,
    test: &Dataset,
) -> Result<(f64, f64, u64, u64)> {
    let ensemble = match method {
        Method::Sisa => {
            let mode = if test.task().is_classification() {
                AggregationMode::MajorityVote
            } else {
                AggregationMode::MeanPrediction
            };
            run.ensemble(gen, mode)?
        }
        Method::SisaPlusPlus => {
            let merged = run.merged_model(gen)?;
            EnsembleModel::new(vec![merged], AggregationMode::WeightAverage)?
        }
    };
    let fp_before = forward_passes_on_thread();
    let preds = ensemble.predict_dataset(test)?;
    let fp_used = forward_passes_on_thread() - fp_before;
    let queries = test.len() as u64;

    match test.task() {
        TaskKind::Classification { classes } => {
            let pred_labels: Vec<usize> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Class(c) => *c,
                    Prediction::Value(_) => unreachable!("classification ensemble"),
                })
                .collect();
            let truth: Vec<usize> = test
                .points()
                .iter()
                .map(|p| p.target.class().unwrap())
                .collect();
            Ok((
                accuracy(&pred_labels, &truth)?,
                macro_f1(&pred_labels, &truth, classes)?,
                queries,
                fp_used,
            ))
        }
        TaskKind::Regression => {
            let pred_values: Vec<f64> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Value(v) => *v,
                    Prediction::Class(_) => unreachable!("regression ensemble"),
                })
                .collect();
            let truth: Vec<f64> = test
                .points()
                .iter()
                .map(|p| p.target.value().unwrap())
                .collect();
            Ok((
                mae(&pred_values, &truth)?,
                rmse(&pred_values, &truth)?,
                queries,
                fp_used,
            ))
        }
    }
}

fn copy_dir_recursive(src: &Path, dst: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dst)?;
    for entry in std::fs::read_dir(src)? {
        let entry = entry?;
        let to = dst.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir_recursive(&entry.path(), &to)?;
        } else {
            std::fs::copy(entry.path(), &to)?;
        }
    }
    Ok(())
}

/// Runs every cell of one shard count: base training, before evals, then
/// one unlearning condition per removal count with after evals.
fn run_shard_group(
    k: usize,
    train: &Dataset,
    test: &Dataset,
    cfg: &GridConfig,
    out: &Path,
) -> Vec<CellOutcome> {
    let mut cells = Vec::new();
    let label = |method: Method, users_removed: usize, phase: Phase| CellLabel {
        shards: k,
        method,
        users_removed,
        phase,
    };
    let fail_all = |err: String| -> Vec<CellOutcome> {
        let mut out = Vec::new();
        for method in Method::ALL {
            out.push(CellOutcome {
                label: label(method, 0, Phase::Before),
                result: Err(err.clone()),
            });
            for &m in &cfg.users_removed {
                out.push(CellOutcome {
                    label: label(method, m, Phase::After),
                    result: Err(err.clone()),
                });
            }
        }
        out
    };

    let base_dir = out.join("runs").join(format!("k{k}")).join("base");
    let base_run = (|| -> Result<Run> {
        let plan = make_shard_plan(train, k, cfg.slices, cfg.seed, PlanMode::UserAware)?;
        let tcfg = cfg.train_config(train)?;
        Run::create(&base_dir, train.clone(), plan, tcfg)
    })();
    let base_run = match base_run {
        Ok(r) => r,
        Err(e) => return fail_all(format!("base training failed: {e}")),
    };

    // Before-unlearning cells: same trained members, two aggregations.
    let gen0 = match base_run.current_generation() {
        Ok(g) => g,
        Err(e) => return fail_all(format!("generation 0 unreadable: {e}")),
    };
    for method in Method::ALL {
        let cell = label(method, 0, Phase::Before);
        let result = evaluate_method(&base_run, &gen0, method, test)
            .map(|(a, b, queries, fp)| EvalReport {
                label: cell.clone(),
                task: test.task(),
                metric_a: a,
                metric_b: b,
                ledger: None,
                removed_users: Vec::new(),
                seed: cfg.seed,
                eval_queries: queries,
                eval_forward_passes: fp,
            })
            .map_err(|e| e.to_string());
        cells.push(CellOutcome {
            label: cell,
            result,
        });
    }

    // One removal condition per requested user count, each on its own copy
    // of the base run so conditions stay independent.
    for &m in &cfg.users_removed {
        let cond_dir = out.join("runs").join(format!("k{k}")).join(format!("u{m}"));
        let outcome = (|| -> Result<(Run, crate::unlearn::UnlearnOutcome, Vec<String>)> {
            copy_dir_recursive(&base_dir, &cond_dir)?;
            let run = Run::open(&cond_dir)?;
            let users = select_removal_users(train, run.plan(), m)?;
            let request = UnlearnRequest::users(users.clone())?;
            let outcome = execute_unlearn(&run, &request)?;
            Ok((run, outcome, users))
        })();
        match outcome {
            Err(e) => {
                for method in Method::ALL {
                    cells.push(CellOutcome {
                        label: label(method, m, Phase::After),
                        result: Err(format!("unlearning failed: {e}")),
                    });
                }
            }
            Ok((run, outcome, users)) => {
                let gen = match run.generation(outcome.generation_after) {
                    Ok(g) => g,
                    Err(e) => {
                        for method in Method::ALL {
                            cells.push(CellOutcome {
                                label: label(method, m, Phase::After),
                                result: Err(e.to_string()),
                            });
                        }
                        continue;
                    }
                };
                for method in Method::ALL {
                    let cell = label(method, m, Phase::After);
                    let result = evaluate_method(&run, &gen, method, test)
                        .map(|(a, b, queries, fp)| EvalReport {
                            label: cell.clone(),
                            task: test.task(),
                            metric_a: a,
                            metric_b: b,
                            ledger: Some(outcome.ledger.clone()),
                            removed_users: users.clone(),
                            seed: cfg.seed,
                            eval_queries: queries,
                            eval_forward_passes: fp,
                        })
                        .map_err(|e| e.to_string());
                    cells.push(CellOutcome {
                        label: cell,
                        result,
                    });
                }
            }
        }
    }
    cells
}

/// Runs the full grid and writes per-cell files plus `summary.txt` under
/// `out`. The output tree is byte-identical across reruns with the same
/// dataset and config.
pub fn run_grid(dataset: &Dataset, cfg: &GridConfig, out: &Path) -> Result<GridOutput> {
    if cfg.shard_counts.is_empty() || cfg.users_removed.is_empty() {
        return Err(Error::InvalidConfig(
            "grid needs at least one shard count and one removal count".into(),
        ));
    }
    let summary_path = out.join("summary.txt");
    if summary_path.exists() {
        return Err(Error::Run(format!(
            "{} already holds a grid run",
            out.display()
        )));
    }
    std::fs::create_dir_all(out.join("cells"))?;
    let (train, test) = split_dataset(dataset, cfg.split_ratio, cfg.seed)?;

    let groups: Vec<Vec<CellOutcome>> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Run(format!("worker pool: {e}")))?;
        pool.install(|| {
            cfg.shard_counts
                .par_iter()
                .map(|&k| run_shard_group(k, &train, &test, cfg, out))
                .collect()
        })
    } else {
        cfg.shard_counts
            .iter()
            .map(|&k| run_shard_group(k, &train, &test, cfg, out))
            .collect()
    };

    let mut cells: Vec<CellOutcome> = groups.into_iter().flatten().collect();
    cells.sort_by(|a, b| a.label.cmp(&b.label));

    for cell in &cells {
        if let Ok(report) = &cell.result {
            report
                .to_manifest()
                .save(&out.join("cells").join(cell.label.file_name()))?;
        }
    }
    let summary = render_summary(&cells, &test);
    std::fs::write(&summary_path, summary)?;
    Ok(GridOutput {
        cells,
        summary_path,
    })
}

fn render_summary(cells: &[CellOutcome], test: &Dataset) -> String {
    let (name_a, name_b) = match test.task() {
        TaskKind::Classification { .. } => ("accuracy", "macro_f1"),
        TaskKind::Regression => ("mae", "rmse"),
    };
    let mut out = String::new();
    out.push_str("# benchmark grid summary\n");
    out.push_str(&format!(
        "task={} test_points={}\n\n",
        match test.task() {
            TaskKind::Classification { .. } => "classification",
            TaskKind::Regression => "regression",
        },
        test.len()
    ));
    out.push_str(&format!(
        "{:<8} {:>6} {:>8} {:<7} {:>10} {:>10} {:>11} {:>11} {:>9}\n",
        "method",
        "shards",
        "removed",
        "phase",
        name_a,
        name_b,
        format!("d_{name_a}"),
        format!("d_{name_b}"),
        "savings"
    ));

    let before_of = |method: Method, shards: usize| -> Option<&EvalReport> {
        cells.iter().find_map(|c| match &c.result {
            Ok(r)
                if r.label.method == method
                    && r.label.shards == shards
                    && r.label.phase == Phase::Before =>
            {
                Some(r)
            }
            _ => None,
        })
    };

    for cell in cells {
        match &cell.result {
            Ok(r) => {
                let removed = if r.label.phase == Phase::Before {
                    "-".to_string()
                } else {
                    r.label.users_removed.to_string()
                };
                let (da, db) = match (r.label.phase, before_of(r.label.method, r.label.shards)) {
                    (Phase::After, Some(before)) => (
                        format!("{:+.6}", r.metric_a - before.metric_a),
                        format!("{:+.6}", r.metric_b - before.metric_b),
                    ),
                    _ => ("-".to_string(), "-".to_string()),
                };
                let savings = r
                    .ledger
                    .as_ref()
                    .map_or("-".to_string(), |l| format!("{:.6}", l.savings_ratio));
                out.push_str(&format!(
                    "{:<8} {:>6} {:>8} {:<7} {:>10.6} {:>10.6} {:>11} {:>11} {:>9}\n",
                    r.label.method.to_string(),
                    r.label.shards,
                    removed,
                    r.label.phase.to_string(),
                    r.metric_a,
                    r.metric_b,
                    da,
                    db,
                    savings
                ));
            }
            Err(e) => {
                out.push_str(&format!(
                    "{:<8} {:>6} {:>8} {:<7} FAILED: {}\n",
                    cell.label.method.to_string(),
                    cell.label.shards,
                    cell.label.users_removed,
                    cell.label.phase.to_string(),
                    e
                ));
            }
        }
    }

    let failures = cells.iter().filter(|c| c.result.is_err()).count();
    out.push_str(&format!(
        "\ncells={} ok={} failed={}\n",
        cells.len(),
        cells.len() - failures,
        failures
    ));
    out
}
