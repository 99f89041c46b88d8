//! On-disk run layout: dataset + plan + config at the root, one immutable
//! generation directory per training or unlearning transaction.
//!
//! ```text
//! <run>/
//!   data.features          input features (FeatureFile format)
//!   plan.txt               shard plan manifest
//!   config.toml            resolved train config
//!   generations/
//!     gen-0000/            initial training
//!       meta.txt           live shards, cumulative removed point ids
//!       merged.manifest    cached weight-averaged model
//!       merged.bin
//!       shards/...         checkpoint store
//!     gen-0001/            written by the first unlearning transaction
//!       outcome.txt        request echo and cost ledger
//!       ...
//! ```
//!
//! Generations are append-only: unlearning writes a new one and never
//! mutates its parent.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::aggregate::{weight_average, AggregationMode, EnsembleModel};
use crate::data::{DataPoint, Dataset};
use crate::error::{Error, Result};
use crate::harness::featurefile;
use crate::manifest::{join_list, split_list, Manifest};
use crate::model::{read_model, write_model, ModelParams};
use crate::sharding::ShardPlan;
use crate::trainer::{stage_epochs, stage_steps, train_shard, CheckpointStore, TrainConfig};

pub const DATA_FILE: &str = "data.features";
pub const PLAN_FILE: &str = "plan.txt";
pub const CONFIG_FILE: &str = "config.toml";

/// A trained run handle: directory plus the parsed inputs every transaction
/// agrees on.
#[derive(Debug, Clone)]
pub struct Run {
    root: PathBuf,
    dataset: Dataset,
    plan: ShardPlan,
    config: TrainConfig,
}

/// One immutable generation of shard models.
#[derive(Debug, Clone)]
pub struct Generation {
    pub id: usize,
    pub parent: Option<usize>,
    pub live_shards: Vec<usize>,
    pub removed: BTreeSet<u64>,
    dir: PathBuf,
}

impl Generation {
    pub(crate) fn new(
        id: usize,
        parent: Option<usize>,
        live_shards: Vec<usize>,
        removed: BTreeSet<u64>,
        dir: PathBuf,
    ) -> Self {
        Generation {
            id,
            parent,
            live_shards,
            removed,
            dir,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn store(&self) -> Result<CheckpointStore> {
        CheckpointStore::open(&self.dir)
    }

    fn load(dir: PathBuf) -> Result<Self> {
        let meta = Manifest::load(&dir.join("meta.txt"))?;
        let id: usize = meta.get_parsed("generation")?;
        let parent = match meta.get("parent")? {
            "-" => None,
            raw => Some(raw.parse().map_err(|_| {
                Error::parse(dir.join("meta.txt"), "bad parent")
            })?),
        };
        let live_shards: Vec<usize> = split_list(meta.get("live_shards")?)
            .map_err(|_| Error::parse(dir.join("meta.txt"), "bad live_shards"))?;
        let removed: Vec<u64> = split_list(meta.get("removed_points")?)
            .map_err(|_| Error::parse(dir.join("meta.txt"), "bad removed_points"))?;
        Ok(Generation {
            id,
            parent,
            live_shards,
            removed: removed.into_iter().collect(),
            dir,
        })
    }

    pub(crate) fn write_meta(&self) -> Result<()> {
        let mut meta = Manifest::new();
        meta.set("generation", self.id);
        meta.set("parent", self.parent.map_or("-".into(), |p| p.to_string()));
        meta.set("live_shards", join_list(self.live_shards.iter()));
        meta.set("removed_points", join_list(self.removed.iter()));
        meta.save(&self.dir.join("meta.txt"))
    }
}

pub fn generation_dir_name(id: usize) -> String {
    format!("gen-{id:04}")
}

impl Run {
    /// Materializes a run directory from its three inputs and trains the
    /// initial generation. The directory must not already contain a run.
    pub fn create(
        root: impl Into<PathBuf>,
        dataset: Dataset,
        plan: ShardPlan,
        config: TrainConfig,
    ) -> Result<Run> {
        let root = root.into();
        plan.validate_against(&dataset)?;
        config.validate()?;
        if config.arch.input_dim != dataset.feature_dim() {
            return Err(Error::InvalidConfig(format!(
                "arch input_dim {} but data has {} features",
                config.arch.input_dim,
                dataset.feature_dim()
            )));
        }
        if config.arch.task != dataset.task() {
            return Err(Error::InvalidConfig(
                "arch task does not match the dataset task".into(),
            ));
        }
        if root.join(DATA_FILE).exists() {
            return Err(Error::Run(format!(
                "{} already contains a run",
                root.display()
            )));
        }
        std::fs::create_dir_all(root.join("generations"))?;
        featurefile::write(&root.join(DATA_FILE), &dataset)?;
        plan.write(&root.join(PLAN_FILE))?;
        config.save(&root.join(CONFIG_FILE))?;
        let run = Run {
            root,
            dataset,
            plan,
            config,
        };
        run.train_initial()?;
        Ok(run)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Run> {
        let root = root.into();
        let dataset = featurefile::read(&root.join(DATA_FILE))?;
        let plan = ShardPlan::read(&root.join(PLAN_FILE))?;
        let config = TrainConfig::load(&root.join(CONFIG_FILE))?;
        plan.validate_against(&dataset)?;
        Ok(Run {
            root,
            dataset,
            plan,
            config,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn plan(&self) -> &ShardPlan {
        &self.plan
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generation_ids(&self) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        let gen_root = self.root.join("generations");
        for entry in std::fs::read_dir(&gen_root)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name.strip_prefix("gen-") {
                if let Ok(id) = num.parse::<usize>() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn generation(&self, id: usize) -> Result<Generation> {
        let dir = self.root.join("generations").join(generation_dir_name(id));
        if !dir.is_dir() {
            return Err(Error::GenerationMismatch(format!(
                "generation {id} does not exist under {}",
                self.root.display()
            )));
        }
        Generation::load(dir)
    }

    pub fn current_generation(&self) -> Result<Generation> {
        let ids = self.generation_ids()?;
        let last = *ids
            .last()
            .ok_or_else(|| Error::Run("run has no generations".into()))?;
        self.generation(last)
    }

    /// Points of every (shard, slice) cell with the removed ids filtered
    /// out, dataset order preserved: `[shard][slice] -> points`.
    pub fn partition_slices(&self, removed: &BTreeSet<u64>) -> Result<Vec<Vec<Vec<DataPoint>>>> {
        partition_slices(&self.dataset, &self.plan, removed)
    }

    fn train_initial(&self) -> Result<Generation> {
        let gen = Generation::new(
            0,
            None,
            (0..self.plan.k).collect(),
            BTreeSet::new(),
            self.root.join("generations").join(generation_dir_name(0)),
        );
        let store = CheckpointStore::create(&gen.dir)?;
        let slices = self.partition_slices(&BTreeSet::new())?;
        // Shards are independent jobs; train them in parallel. Each writes
        // only its own keyspace.
        let results: Vec<Result<()>> = slices
            .par_iter()
            .enumerate()
            .map(|(shard, shard_slices)| {
                train_shard(shard_slices, &self.config, shard, &store).map(|_| ())
            })
            .collect();
        for r in results {
            r?;
        }
        self.write_merged(&gen)?;
        gen.write_meta()?;
        Ok(gen)
    }

    /// Final (stage R-1) models of the generation's live shards, ascending
    /// shard order.
    pub fn final_models(&self, gen: &Generation) -> Result<Vec<(usize, ModelParams)>> {
        let store = gen.store()?;
        let mut out = Vec::with_capacity(gen.live_shards.len());
        for &shard in &gen.live_shards {
            let model = store.final_model(&self.config.arch, shard, self.plan.r)?;
            out.push((shard, model));
        }
        Ok(out)
    }

    pub(crate) fn write_merged(&self, gen: &Generation) -> Result<()> {
        let members: Vec<ModelParams> = self
            .final_models(gen)?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        let merged = weight_average(&members)?;
        write_model(&gen.dir, "merged", &merged)
    }

    /// The generation's weight-averaged model. Reads the per-generation
    /// cache written at creation time; recomputes only if the cache file is
    /// absent.
    pub fn merged_model(&self, gen: &Generation) -> Result<ModelParams> {
        match read_model(&gen.dir, "merged") {
            Ok(m) => Ok(m),
            Err(Error::Io(_)) => {
                let members: Vec<ModelParams> = self
                    .final_models(gen)?
                    .into_iter()
                    .map(|(_, m)| m)
                    .collect();
                weight_average(&members)
            }
            Err(e) => Err(e),
        }
    }

    /// Builds the ensemble for a generation under the given mode.
    pub fn ensemble(&self, gen: &Generation, mode: AggregationMode) -> Result<EnsembleModel> {
        let members: Vec<ModelParams> = self
            .final_models(gen)?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        EnsembleModel::new(members, mode)
    }
}

/// The weight-averaged model of a run's current generation.
pub fn merged_model_of_run(run: &Run) -> Result<ModelParams> {
    let gen = run.current_generation()?;
    run.merged_model(&gen)
}

pub fn partition_slices(
    dataset: &Dataset,
    plan: &ShardPlan,
    removed: &BTreeSet<u64>,
) -> Result<Vec<Vec<Vec<DataPoint>>>> {
    let mut out = vec![vec![Vec::new(); plan.r]; plan.k];
    for p in dataset.points() {
        if removed.contains(&p.point_id) {
            continue;
        }
        let (shard, slice) = plan.cell_of(p.point_id)?;
        out[shard][slice].push(p.clone());
    }
    Ok(out)
}

/// Optimizer steps a full from-scratch retrain of every live shard would
/// cost on the retained data. Computed analytically from slice sizes, never
/// executed.
pub fn full_retrain_baseline_steps(
    slices: &[Vec<Vec<DataPoint>>],
    live_shards: &[usize],
    cfg: &TrainConfig,
) -> u64 {
    let mut total = 0u64;
    for &shard in live_shards {
        let shard_slices = &slices[shard];
        let epochs = stage_epochs(cfg.epochs_total, shard_slices.len());
        let mut union = 0usize;
        for (stage, slice) in shard_slices.iter().enumerate() {
            union += slice.len();
            if slice.is_empty() {
                continue; // vacuous stage, skipped by the trainer too
            }
            total += stage_steps(union, epochs[stage], cfg.batch_size);
        }
    }
    total
}
