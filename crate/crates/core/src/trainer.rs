//! Slice-incremental training with per-stage checkpoints.
//!
//! A shard with R slices trains in R stages: stage `s` runs its share of the
//! epoch budget on the union of slices `0..=s`, then persists a checkpoint
//! of the model, optimizer and shuffle-stream state. Removing points whose
//! earliest slice is `s` means resuming from the stage `s-1` checkpoint and
//! re-running stages `s..R` on the retained points, which reproduces a
//! from-scratch run on the retained data bit for bit: every random decision
//! is keyed by `(seed, shard, stage)` and never by data contents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataPoint;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::{
    adam_step, init_model, loss_and_grad, read_params_blob, write_params_blob, AdamParams,
    ArchDescriptor, Activation, ModelParams, OptimizerState, TaskKind,
};
use crate::rng::{RngPath, RngState, RngStream};

/// Hyperparameters and architecture for one run. The same configuration is
/// used for initial training and for every retraining pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_total: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub arch: ArchDescriptor,
    pub master_seed: u64,
    /// All shard models start from the same seeded initialization. Averaging
    /// independently initialized networks is degraded by permutation
    /// symmetry, so this defaults to on; disable to give each shard its own
    /// init stream.
    pub shared_init: bool,
}

impl TrainConfig {
    pub fn new(arch: ArchDescriptor, master_seed: u64) -> Self {
        TrainConfig {
            epochs_total: 20,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            arch,
            master_seed,
            shared_init: true,
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_total == 0 {
            return Err(Error::InvalidConfig("epochs_total must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }

    fn init_path(&self, shard: usize) -> RngPath {
        if self.shared_init {
            RngPath::init(self.master_seed)
        } else {
            RngPath::shard_init(self.master_seed, shard)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TrainConfigFile::from(self);
        let text = toml::to_string(&file)
            .map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: TrainConfigFile =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let cfg = file.resolve(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// On-disk TOML shape of a train config. The `[arch]` section may be
/// omitted when the caller derives the architecture from a data file.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainConfigFile {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_true")]
    pub shared_init: bool,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default)]
    pub arch: Option<ArchFileSection>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArchFileSection {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub task: String,
    pub activation: String,
}

fn default_epochs() -> usize {
    20
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    32
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}
fn default_hidden() -> Vec<usize> {
    vec![128]
}
fn default_activation() -> String {
    "relu".into()
}

pub(crate) fn parse_activation(name: &str) -> Result<Activation> {
    match name {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
    }
}

impl TrainConfigFile {
    /// Resolves to a full config; requires the `[arch]` section.
    pub fn resolve(&self, origin: &Path) -> Result<TrainConfig> {
        let arch = match &self.arch {
            Some(section) => {
                let task = match section.task.as_str() {
                    "classification" => TaskKind::Classification {
                        classes: section.output_dim,
                    },
                    "regression" => TaskKind::Regression,
                    other => {
                        return Err(Error::parse(origin, format!("unknown task {other:?}")))
                    }
                };
                let arch = ArchDescriptor::new(
                    section.input_dim,
                    section.hidden_dims.clone(),
                    task,
                    parse_activation(&section.activation)?,
                )?;
                if arch.output_dim != section.output_dim {
                    return Err(Error::parse(origin, "output_dim inconsistent with task"));
                }
                arch
            }
            None => {
                return Err(Error::parse(
                    origin,
                    "missing [arch] section; derive it from a data file first",
                ))
            }
        };
        Ok(TrainConfig {
            epochs_total: self.epochs,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            arch,
            master_seed: self.master_seed,
            shared_init: self.shared_init,
        })
    }

    /// Fills in the `[arch]` section from data-file shape.
    pub fn with_arch(mut self, input_dim: usize, task: TaskKind) -> Result<Self> {
        let arch = ArchDescriptor::new(
            input_dim,
            self.hidden_dims.clone(),
            task,
            parse_activation(&self.activation)?,
        )?;
        self.arch = Some(ArchFileSection {
            input_dim,
            hidden_dims: arch.hidden_dims.clone(),
            output_dim: arch.output_dim,
            task: match task {
                TaskKind::Classification { .. } => "classification".into(),
                TaskKind::Regression => "regression".into(),
            },
            activation: self.activation.clone(),
        });
        Ok(self)
    }
}

impl From<&TrainConfig> for TrainConfigFile {
    fn from(cfg: &TrainConfig) -> Self {
        let activation = match cfg.arch.activation {
            Activation::Relu => "relu".to_string(),
            Activation::Tanh => "tanh".to_string(),
        };
        TrainConfigFile {
            epochs: cfg.epochs_total,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            master_seed: cfg.master_seed,
            shared_init: cfg.shared_init,
            hidden_dims: cfg.arch.hidden_dims.clone(),
            activation: activation.clone(),
            arch: Some(ArchFileSection {
                input_dim: cfg.arch.input_dim,
                hidden_dims: cfg.arch.hidden_dims.clone(),
                output_dim: cfg.arch.output_dim,
                task: match cfg.arch.task {
                    TaskKind::Classification { .. } => "classification".into(),
                    TaskKind::Regression => "regression".into(),
                },
                activation,
            }),
        }
    }
}

/// Epoch budget per stage: `floor(E/R)` each, remainder on the final stage,
/// so the total always equals `E`.
pub fn stage_epochs(epochs_total: usize, r: usize) -> Vec<usize> {
    let base = epochs_total / r;
    let mut out = vec![base; r];
    out[r - 1] += epochs_total % r;
    out
}

/// Optimizer steps a stage executes: epochs times batches per epoch.
pub fn stage_steps(union_len: usize, stage_epochs: usize, batch_size: usize) -> u64 {
    if union_len == 0 {
        return 0;
    }
    let batches = union_len.div_ceil(batch_size) as u64;
    stage_epochs as u64 * batches
}

/// SHA-256 over the ordered point-id list a stage trains on.
pub fn data_digest(point_ids: &[u64]) -> String {
    let mut h = Sha256::new();
    h.update(b"sisa.digest.v1");
    h.update((point_ids.len() as u64).to_le_bytes());
    for id in point_ids {
        h.update(id.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Snapshot of one (shard, stage) cell.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub shard: usize,
    pub stage: usize,
    /// True when the stage's slice was empty (after removals) and the stage
    /// was skipped; the snapshot then duplicates the prior stage.
    pub vacuous: bool,
    pub model: ModelParams,
    pub opt: OptimizerState,
    pub rng: RngState,
    pub digest: String,
    pub epochs_run: usize,
    pub steps_run: u64,
}

/// One generation's checkpoint keyspace on disk. Layout:
/// `<gen>/shards/shard-NNNN/stage-NNNN/{checkpoint.txt,model.bin,opt.bin}`.
/// A (shard, stage) key is write-once.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("shards"))?;
        Ok(CheckpointStore { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("shards").is_dir() {
            return Err(Error::Run(format!(
                "{} is not a checkpoint store",
                root.display()
            )));
        }
        Ok(CheckpointStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn shard_dir(&self, shard: usize) -> PathBuf {
        self.root.join("shards").join(format!("shard-{shard:04}"))
    }

    pub fn stage_dir(&self, shard: usize, stage: usize) -> PathBuf {
        self.shard_dir(shard).join(format!("stage-{stage:04}"))
    }

    pub fn has_stage(&self, shard: usize, stage: usize) -> bool {
        self.stage_dir(shard, stage).join("checkpoint.txt").is_file()
    }

    /// Highest stage present for a shard, if any.
    pub fn latest_stage(&self, shard: usize) -> Option<usize> {
        let mut stage = None;
        let dir = self.shard_dir(shard);
        let entries = std::fs::read_dir(dir).ok()?;
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name.strip_prefix("stage-") {
                if let Ok(s) = num.parse::<usize>() {
                    if self.has_stage(shard, s) {
                        stage = Some(stage.map_or(s, |prev: usize| prev.max(s)));
                    }
                }
            }
        }
        stage
    }

    pub fn write_stage(&self, ck: &Checkpoint) -> Result<()> {
        let dir = self.stage_dir(ck.shard, ck.stage);
        if dir.join("checkpoint.txt").exists() {
            return Err(Error::CheckpointExists {
                shard: ck.shard,
                stage: ck.stage,
            });
        }
        std::fs::create_dir_all(&dir)?;
        write_params_blob(&dir.join("model.bin"), &ck.model.params)?;
        let mut opt_blob = ck.opt.m.clone();
        opt_blob.extend_from_slice(&ck.opt.v);
        write_params_blob(&dir.join("opt.bin"), &opt_blob)?;

        let mut m = Manifest::new();
        m.set("shard", ck.shard);
        m.set("stage", ck.stage);
        m.set("vacuous", ck.vacuous);
        m.set("digest", &ck.digest);
        m.set("epochs_run", ck.epochs_run);
        m.set("steps_run", ck.steps_run);
        m.set("opt_t", ck.opt.t);
        m.set("lr", ck.opt.hyper.lr);
        m.set("beta1", ck.opt.hyper.beta1);
        m.set("beta2", ck.opt.hyper.beta2);
        m.set("epsilon", ck.opt.hyper.epsilon);
        m.set("param_count", ck.model.params.len());
        m.set("rng_master_seed", ck.rng.path.master_seed);
        m.set(
            "rng_shard",
            ck.rng.path.shard.map_or("-".into(), |v| v.to_string()),
        );
        m.set(
            "rng_slice",
            ck.rng.path.slice.map_or("-".into(), |v| v.to_string()),
        );
        m.set("rng_purpose", &ck.rng.path.purpose);
        m.set("rng_word_pos", ck.rng.word_pos);
        m.save(&dir.join("checkpoint.txt"))?;
        Ok(())
    }

    pub fn read_stage(&self, arch: &ArchDescriptor, shard: usize, stage: usize) -> Result<Checkpoint> {
        let dir = self.stage_dir(shard, stage);
        let manifest_path = dir.join("checkpoint.txt");
        if !manifest_path.is_file() {
            return Err(Error::CheckpointMissing {
                shard,
                stage,
                latest: self
                    .latest_stage(shard)
                    .map_or("none".into(), |s| s.to_string()),
            });
        }
        let m = Manifest::load(&manifest_path)?;
        let params = read_params_blob(&dir.join("model.bin"))?;
        let model = ModelParams::new(arch.clone(), params)?;
        let opt_blob = read_params_blob(&dir.join("opt.bin"))?;
        let n = model.params.len();
        if opt_blob.len() != 2 * n {
            return Err(Error::parse(dir.join("opt.bin"), "optimizer blob size"));
        }
        let opt = OptimizerState {
            t: m.get_parsed("opt_t")?,
            m: opt_blob[..n].to_vec(),
            v: opt_blob[n..].to_vec(),
            hyper: AdamParams {
                lr: m.get_parsed("lr")?,
                beta1: m.get_parsed("beta1")?,
                beta2: m.get_parsed("beta2")?,
                epsilon: m.get_parsed("epsilon")?,
            },
        };
        let opt_field = |key: &str| -> Result<Option<u64>> {
            let raw = m.get(key)?;
            if raw == "-" {
                Ok(None)
            } else {
                raw.parse().map(Some).map_err(|_| {
                    Error::parse(&manifest_path, format!("bad {key}"))
                })
            }
        };
        let rng = RngState {
            path: RngPath::new(
                m.get_parsed("rng_master_seed")?,
                opt_field("rng_shard")?,
                opt_field("rng_slice")?,
                m.get("rng_purpose")?,
            ),
            word_pos: m.get_parsed("rng_word_pos")?,
        };
        Ok(Checkpoint {
            shard,
            stage,
            vacuous: m.get_parsed("vacuous")?,
            model,
            opt,
            rng,
            digest: m.get("digest")?.to_string(),
            epochs_run: m.get_parsed("epochs_run")?,
            steps_run: m.get_parsed("steps_run")?,
        })
    }

    /// Byte-copies stage directories `0..upto` of one shard from another
    /// store. Used to carry unaffected prefixes into a new generation.
    pub fn copy_stages_from(&self, other: &CheckpointStore, shard: usize, upto: usize) -> Result<()> {
        for stage in 0..upto {
            let src = other.stage_dir(shard, stage);
            let dst = self.stage_dir(shard, stage);
            if dst.join("checkpoint.txt").exists() {
                return Err(Error::CheckpointExists { shard, stage });
            }
            std::fs::create_dir_all(&dst)?;
            for name in ["checkpoint.txt", "model.bin", "opt.bin"] {
                std::fs::copy(src.join(name), dst.join(name))?;
            }
        }
        Ok(())
    }

    pub fn final_model(&self, arch: &ArchDescriptor, shard: usize, r: usize) -> Result<ModelParams> {
        Ok(self.read_stage(arch, shard, r - 1)?.model)
    }
}

/// What a training or resumption pass did, plus the resulting model.
#[derive(Debug, Clone)]
pub struct ShardTrainOutcome {
    pub model: ModelParams,
    /// Stages that actually ran training (vacuous stages excluded).
    pub stages_executed: usize,
    pub optimizer_steps: u64,
}

/// Trains one shard through all R slice stages from a fresh initialization,
/// persisting a checkpoint after each stage, and returns the final model.
/// Slices must be given in slice order; points inside a slice in dataset
/// order.
pub fn train_shard(
    slices: &[Vec<DataPoint>],
    cfg: &TrainConfig,
    shard_index: usize,
    store: &CheckpointStore,
) -> Result<ShardTrainOutcome> {
    cfg.validate()?;
    if slices.is_empty() {
        return Err(Error::InvalidPlan("shard has no slices".into()));
    }
    if slices.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyShard {
            shard: shard_index,
            detail: "every slice is empty".into(),
        });
    }
    let mut init_rng = RngStream::new(cfg.init_path(shard_index));
    let model = init_model(&cfg.arch, &mut init_rng);
    let opt = OptimizerState::new(model.params.len(), cfg.adam());
    run_stages(0, model, opt, slices, cfg, shard_index, store)
}

/// Re-executes stages `from_stage..R` on the retained slices, starting from
/// the stage `from_stage - 1` checkpoint in `prev` (or from a fresh init
/// when `from_stage` is 0), writing new checkpoints into `next`. The replay
/// is exactly what [`train_shard`] on the retained slices would produce.
/// `from_stage == R` returns the stored final model unchanged.
pub fn resume_shard(
    prev: &CheckpointStore,
    next: &CheckpointStore,
    shard_index: usize,
    from_stage: usize,
    retained_slices: &[Vec<DataPoint>],
    cfg: &TrainConfig,
) -> Result<ShardTrainOutcome> {
    cfg.validate()?;
    let r = retained_slices.len();
    if from_stage > r {
        return Err(Error::InvalidPlan(format!(
            "from_stage {from_stage} exceeds slice count {r}"
        )));
    }
    if from_stage == r {
        let model = prev.final_model(&cfg.arch, shard_index, r)?;
        return Ok(ShardTrainOutcome {
            model,
            stages_executed: 0,
            optimizer_steps: 0,
        });
    }
    if from_stage == 0 {
        return train_shard(retained_slices, cfg, shard_index, next);
    }

    let ck = prev.read_stage(&cfg.arch, shard_index, from_stage - 1)?;
    if ck.opt.hyper != cfg.adam() {
        return Err(Error::ConfigMismatch {
            shard: shard_index,
            stage: from_stage - 1,
            detail: "optimizer hyperparameters differ from the stored state".into(),
        });
    }
    // Guard against silent plan drift: the stored prefix must match the
    // retained prefix exactly.
    let prefix_ids: Vec<u64> = retained_slices[..from_stage]
        .iter()
        .flatten()
        .map(|p| p.point_id)
        .collect();
    if data_digest(&prefix_ids) != ck.digest {
        return Err(Error::DigestMismatch {
            shard: shard_index,
            stage: from_stage - 1,
        });
    }
    run_stages(
        from_stage,
        ck.model,
        ck.opt,
        retained_slices,
        cfg,
        shard_index,
        next,
    )
}

fn run_stages(
    start_stage: usize,
    mut model: ModelParams,
    mut opt: OptimizerState,
    slices: &[Vec<DataPoint>],
    cfg: &TrainConfig,
    shard_index: usize,
    store: &CheckpointStore,
) -> Result<ShardTrainOutcome> {
    let r = slices.len();
    let epochs = stage_epochs(cfg.epochs_total, r);
    let mut stages_executed = 0;
    let mut total_steps = 0u64;

    for stage in start_stage..r {
        let union: Vec<&DataPoint> = slices[..=stage].iter().flatten().collect();
        let union_ids: Vec<u64> = union.iter().map(|p| p.point_id).collect();
        let vacuous = slices[stage].is_empty();
        let mut steps_run = 0u64;
        let rng_state;

        if vacuous {
            rng_state = RngState::at_origin(RngPath::shuffle(cfg.master_seed, shard_index, stage));
        } else {
            let mut shuffle_rng =
                RngStream::new(RngPath::shuffle(cfg.master_seed, shard_index, stage));
            let mut order: Vec<usize> = (0..union.len()).collect();
            for _ in 0..epochs[stage] {
                shuffle_rng.shuffle(&mut order);
                for batch_ids in order.chunks(cfg.batch_size) {
                    let batch: Vec<&DataPoint> =
                        batch_ids.iter().map(|&i| union[i]).collect();
                    let (_loss, grad) = loss_and_grad(&model, &batch)?;
                    let (next_model, next_opt) = adam_step(&model, &opt, &grad)?;
                    model = next_model;
                    opt = next_opt;
                    steps_run += 1;
                }
            }
            stages_executed += 1;
            rng_state = shuffle_rng.state();
        }
        total_steps += steps_run;

        store.write_stage(&Checkpoint {
            shard: shard_index,
            stage,
            vacuous,
            model: model.clone(),
            opt: opt.clone(),
            rng: rng_state,
            digest: data_digest(&union_ids),
            epochs_run: if vacuous { 0 } else { epochs[stage] },
            steps_run,
        })?;
    }

    Ok(ShardTrainOutcome {
        model,
        stages_executed,
        optimizer_steps: total_steps,
    })
}
