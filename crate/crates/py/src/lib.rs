//! Python bindings: synthetic data, shard plans, training, unlearning,
//! verification, inference and metrics over the same run directories the
//! CLI uses.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::IntoPyObjectExt;

use sisa::harness::featurefile;
use sisa::harness::grid::{run_grid, GridConfig};
use sisa::{
    execute_unlearn, gen_synthetic, make_shard_plan, verify_erasure, Activation,
    AggregationMode, ArchDescriptor, Dataset, EnsembleModel, PlanMode, Prediction, SynthSpec,
    TaskKind, TrainConfig, UnlearnRequest,
};

fn err(e: sisa::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A trained run directory.
#[pyclass(name = "Run")]
struct PyRun {
    inner: sisa::Run,
}

impl PyRun {
    fn ensemble(&self, mode: &str) -> PyResult<EnsembleModel> {
        let mode = AggregationMode::parse(mode).map_err(err)?;
        let gen = self.inner.current_generation().map_err(err)?;
        match mode {
            AggregationMode::WeightAverage => {
                let merged = self.inner.merged_model(&gen).map_err(err)?;
                EnsembleModel::new(vec![merged], AggregationMode::WeightAverage).map_err(err)
            }
            other => self.inner.ensemble(&gen, other).map_err(err),
        }
    }

    fn unlearn(&self, py: Python<'_>, request: UnlearnRequest) -> PyResult<Py<PyDict>> {
        let outcome = execute_unlearn(&self.inner, &request).map_err(err)?;
        let dict = PyDict::new(py);
        dict.set_item("shards_retrained", outcome.ledger.shards_retrained)?;
        dict.set_item("stages_executed", outcome.ledger.stages_executed)?;
        dict.set_item(
            "optimizer_steps_executed",
            outcome.ledger.optimizer_steps_executed,
        )?;
        dict.set_item(
            "optimizer_steps_full_retrain_baseline",
            outcome.ledger.optimizer_steps_full_retrain_baseline,
        )?;
        dict.set_item("savings_ratio", outcome.ledger.savings_ratio)?;
        dict.set_item(
            "refreshed_shards",
            outcome.refreshed_models.keys().copied().collect::<Vec<_>>(),
        )?;
        dict.set_item("dropped_shards", outcome.dropped_shards)?;
        dict.set_item("generation_before", outcome.generation_before)?;
        dict.set_item("generation_after", outcome.generation_after)?;
        Ok(dict.unbind())
    }
}

#[pymethods]
impl PyRun {
    /// Open an existing run directory.
    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(PyRun {
            inner: sisa::Run::open(path).map_err(err)?,
        })
    }

    fn root(&self) -> String {
        self.inner.root().display().to_string()
    }

    fn shard_count(&self) -> usize {
        self.inner.plan().k
    }

    fn slice_count(&self) -> usize {
        self.inner.plan().r
    }

    fn generations(&self) -> PyResult<Vec<usize>> {
        self.inner.generation_ids().map_err(err)
    }

    fn live_shards(&self) -> PyResult<Vec<usize>> {
        Ok(self.inner.current_generation().map_err(err)?.live_shards)
    }

    fn removed_points(&self) -> PyResult<Vec<u64>> {
        Ok(self
            .inner
            .current_generation()
            .map_err(err)?
            .removed
            .into_iter()
            .collect())
    }

    fn users(&self) -> Vec<String> {
        self.inner.dataset().user_ids()
    }

    /// Erase all points of the given users; returns the cost ledger.
    fn unlearn_users(&self, py: Python<'_>, users: Vec<String>) -> PyResult<Py<PyDict>> {
        self.unlearn(py, UnlearnRequest::users(users).map_err(err)?)
    }

    /// Erase the given points; returns the cost ledger.
    fn unlearn_points(&self, py: Python<'_>, points: Vec<u64>) -> PyResult<Py<PyDict>> {
        self.unlearn(py, UnlearnRequest::points(points).map_err(err)?)
    }

    /// Audit one transaction; returns (check, passed, detail) triples.
    fn verify(&self, before: usize, after: usize) -> PyResult<Vec<(String, bool, String)>> {
        let report = verify_erasure(&self.inner, before, after).map_err(err)?;
        Ok(report
            .checks
            .into_iter()
            .map(|c| (c.name, c.passed, c.detail))
            .collect())
    }

    /// Predict one feature vector; returns a class index or a real value
    /// depending on the run's task. Modes: "vote", "mean", "merge".
    fn predict(&self, py: Python<'_>, features: Vec<f64>, mode: &str) -> PyResult<Py<PyAny>> {
        let ensemble = self.ensemble(mode)?;
        match ensemble.predict(&features).map_err(err)? {
            Prediction::Class(c) => c.into_py_any(py),
            Prediction::Value(v) => v.into_py_any(py),
        }
    }

    /// Metric pair of the current generation on a held-out feature file.
    fn evaluate(&self, test: PathBuf, mode: &str) -> PyResult<HashMap<String, f64>> {
        let test = featurefile::read(&test).map_err(err)?;
        let ensemble = self.ensemble(mode)?;
        let preds = ensemble.predict_dataset(&test).map_err(err)?;
        let mut out = HashMap::new();
        match test.task() {
            TaskKind::Classification { classes } => {
                let labels: Vec<usize> = preds
                    .iter()
                    .map(|p| match p {
                        Prediction::Class(c) => *c,
                        Prediction::Value(_) => 0,
                    })
                    .collect();
                let truth: Vec<usize> = test
                    .points()
                    .iter()
                    .map(|p| p.target.class().unwrap_or(0))
                    .collect();
                out.insert(
                    "accuracy".into(),
                    sisa::accuracy(&labels, &truth).map_err(err)?,
                );
                out.insert(
                    "macro_f1".into(),
                    sisa::macro_f1(&labels, &truth, classes).map_err(err)?,
                );
            }
            TaskKind::Regression => {
                let values: Vec<f64> = preds
                    .iter()
                    .map(|p| match p {
                        Prediction::Value(v) => *v,
                        Prediction::Class(_) => 0.0,
                    })
                    .collect();
                let truth: Vec<f64> = test
                    .points()
                    .iter()
                    .map(|p| p.target.value().unwrap_or(0.0))
                    .collect();
                out.insert("mae".into(), sisa::mae(&values, &truth).map_err(err)?);
                out.insert("rmse".into(), sisa::rmse(&values, &truth).map_err(err)?);
            }
        }
        Ok(out)
    }

    /// Flat parameters of the current generation's weight-averaged model.
    fn merged_params(&self) -> PyResult<Vec<f64>> {
        let gen = self.inner.current_generation().map_err(err)?;
        Ok(self.inner.merged_model(&gen).map_err(err)?.params)
    }

    /// Flat parameters of one live shard's final model.
    fn shard_params(&self, shard: usize) -> PyResult<Vec<f64>> {
        let gen = self.inner.current_generation().map_err(err)?;
        let models = self.inner.final_models(&gen).map_err(err)?;
        models
            .into_iter()
            .find(|(s, _)| *s == shard)
            .map(|(_, m)| m.params)
            .ok_or_else(|| PyValueError::new_err(format!("shard {shard} is not live")))
    }
}

/// Write a seeded synthetic feature file; returns the number of points.
#[pyfunction]
fn generate_synthetic(spec: &str, out: PathBuf) -> PyResult<usize> {
    let dataset = gen_synthetic(&SynthSpec::parse(spec).map_err(err)?).map_err(err)?;
    featurefile::write(&out, &dataset).map_err(err)?;
    Ok(dataset.len())
}

/// Seeded shuffle split of a feature file into train and test files;
/// returns (train_points, test_points).
#[pyfunction]
#[pyo3(signature = (data, train_out, test_out, ratio=0.8, seed=0))]
fn split_features(
    data: PathBuf,
    train_out: PathBuf,
    test_out: PathBuf,
    ratio: f64,
    seed: u64,
) -> PyResult<(usize, usize)> {
    let dataset = featurefile::read(&data).map_err(err)?;
    let (train, test) =
        sisa::harness::grid::split_dataset(&dataset, ratio, seed).map_err(err)?;
    featurefile::write(&train_out, &train).map_err(err)?;
    featurefile::write(&test_out, &test).map_err(err)?;
    Ok((train.len(), test.len()))
}

/// Build a shard plan for a feature file; returns per-shard point counts.
#[pyfunction]
#[pyo3(signature = (data, out, shards, slices=2, seed=0, user_aware=true))]
fn make_plan(
    data: PathBuf,
    out: PathBuf,
    shards: usize,
    slices: usize,
    seed: u64,
    user_aware: bool,
) -> PyResult<Vec<usize>> {
    let dataset = featurefile::read(&data).map_err(err)?;
    let mode = if user_aware {
        PlanMode::UserAware
    } else {
        PlanMode::Random
    };
    let plan = make_shard_plan(&dataset, shards, slices, seed, mode).map_err(err)?;
    plan.write(&out).map_err(err)?;
    Ok(plan.shard_sizes())
}

fn read_with_plan(data: &Path, plan: &Path) -> PyResult<(Dataset, sisa::ShardPlan)> {
    let dataset = featurefile::read(data).map_err(err)?;
    let plan = sisa::ShardPlan::read(plan).map_err(err)?;
    Ok((dataset, plan))
}

/// Train one constituent model per shard into a new run directory.
#[pyfunction]
#[pyo3(signature = (data, plan, out, epochs=20, lr=1e-3, batch_size=32,
                    hidden=vec![128], activation="relu", seed=0, shared_init=true))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: PathBuf,
    plan: PathBuf,
    out: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    hidden: Vec<usize>,
    activation: &str,
    seed: u64,
    shared_init: bool,
) -> PyResult<PyRun> {
    let (dataset, plan) = read_with_plan(&data, &plan)?;
    let activation = match activation {
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown activation {other:?}"
            )))
        }
    };
    let arch = ArchDescriptor::new(dataset.feature_dim(), hidden, dataset.task(), activation)
        .map_err(err)?;
    let mut cfg = TrainConfig::new(arch, seed);
    cfg.epochs_total = epochs;
    cfg.lr = lr;
    cfg.batch_size = batch_size;
    cfg.shared_init = shared_init;
    Ok(PyRun {
        inner: sisa::Run::create(out, dataset, plan, cfg).map_err(err)?,
    })
}

/// Run the benchmark grid on a feature file; returns the summary text.
#[pyfunction]
#[pyo3(name = "bench", signature = (data, out, grid=None))]
fn run_bench(data: PathBuf, out: PathBuf, grid: Option<PathBuf>) -> PyResult<String> {
    let dataset = featurefile::read(&data).map_err(err)?;
    let cfg = match grid {
        Some(path) => GridConfig::load(&path).map_err(err)?,
        None => GridConfig::default(),
    };
    let output = run_grid(&dataset, &cfg, &out).map_err(err)?;
    std::fs::read_to_string(&output.summary_path)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn accuracy(preds: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    sisa::accuracy(&preds, &truth).map_err(err)
}

#[pyfunction]
fn macro_f1(preds: Vec<usize>, truth: Vec<usize>, classes: usize) -> PyResult<f64> {
    sisa::macro_f1(&preds, &truth, classes).map_err(err)
}

#[pyfunction]
fn mae(preds: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    sisa::mae(&preds, &truth).map_err(err)
}

#[pyfunction]
fn rmse(preds: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    sisa::rmse(&preds, &truth).map_err(err)
}

/// Elementwise mean of equally shaped flat parameter vectors.
#[pyfunction]
fn average_params(members: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let first_len = members
        .first()
        .map(|m| m.len())
        .ok_or_else(|| PyValueError::new_err("no members"))?;
    if members.iter().any(|m| m.len() != first_len) {
        return Err(PyValueError::new_err("members differ in length"));
    }
    let inv = 1.0 / members.len() as f64;
    let mut out = vec![0.0; first_len];
    for m in &members {
        for (acc, &v) in out.iter_mut().zip(m.iter()) {
            *acc += v;
        }
    }
    for v in out.iter_mut() {
        *v *= inv;
    }
    Ok(out)
}

#[pymodule]
fn sisa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(split_features, m)?)?;
    m.add_function(wrap_pyfunction!(make_plan, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(average_params, m)?)?;
    Ok(())
}
