//! The unlearning transaction: resolve a request to affected (shard, slice)
//! cells, resume only those shards from their last unaffected checkpoint,
//! refresh the merged model, and account the compute saved against a full
//! retrain.
//!
//! Transactions are serialized per run. Each writes a new generation; the
//! parent generation stays readable and byte-identical forever, which is
//! what lets `verify` compare before and after.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{join_list, split_list, Manifest};
use crate::model::ModelParams;
use crate::run::{full_retrain_baseline_steps, generation_dir_name, Generation, Run};
use crate::sharding::{affected_cells, UnlearnRequest};
use crate::trainer::{data_digest, resume_shard, train_shard, CheckpointStore};

/// Work accounting for one transaction. The baseline is the analytic cost
/// of retraining every live shard from scratch on the retained data; it is
/// computed from slice sizes and never executed.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLedger {
    pub shards_retrained: usize,
    /// Stage re-executions that actually trained (vacuous stages excluded).
    pub stages_executed: usize,
    pub optimizer_steps_executed: u64,
    pub optimizer_steps_full_retrain_baseline: u64,
    /// `1 - executed / baseline`; zero exactly when every stage of every
    /// shard re-executed.
    pub savings_ratio: f64,
}

/// What a transaction did: the refreshed shard models, which shards were
/// dropped, the ledger, and the request echo.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub request: UnlearnRequest,
    pub removed_new: BTreeSet<u64>,
    /// shard -> earliest affected slice, as resolved against the plan.
    pub affected: BTreeMap<usize, usize>,
    pub refreshed_models: BTreeMap<usize, ModelParams>,
    pub dropped_shards: Vec<usize>,
    pub ledger: CostLedger,
    pub generation_before: usize,
    pub generation_after: usize,
}

impl UnlearnOutcome {
    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        match &self.request {
            UnlearnRequest::Users(users) => {
                m.set("request_kind", "users");
                m.set("request_ids", join_list(users.iter()));
            }
            UnlearnRequest::Points(points) => {
                m.set("request_kind", "points");
                m.set("request_ids", join_list(points.iter()));
            }
        }
        m.set("removed_new", join_list(self.removed_new.iter()));
        m.set(
            "affected",
            join_list(self.affected.iter().map(|(s, st)| format!("{s}:{st}"))),
        );
        m.set("refreshed_shards", join_list(self.refreshed_models.keys()));
        m.set("dropped_shards", join_list(self.dropped_shards.iter()));
        m.set("shards_retrained", self.ledger.shards_retrained);
        m.set("stages_executed", self.ledger.stages_executed);
        m.set(
            "optimizer_steps_executed",
            self.ledger.optimizer_steps_executed,
        );
        m.set(
            "optimizer_steps_full_retrain_baseline",
            self.ledger.optimizer_steps_full_retrain_baseline,
        );
        m.set("savings_ratio", self.ledger.savings_ratio);
        m.set("generation_before", self.generation_before);
        m.set("generation_after", self.generation_after);
        m
    }

    pub fn request_from_manifest(m: &Manifest) -> Result<UnlearnRequest> {
        match m.get("request_kind")? {
            "users" => {
                let ids: Vec<String> = split_list(m.get("request_ids")?)
                    .map_err(|_| Error::InvalidRequest("bad request_ids".into()))?;
                UnlearnRequest::users(ids)
            }
            "points" => {
                let ids: Vec<u64> = split_list(m.get("request_ids")?)
                    .map_err(|_| Error::InvalidRequest("bad request_ids".into()))?;
                UnlearnRequest::points(ids)
            }
            other => Err(Error::InvalidRequest(format!(
                "unknown request kind {other:?}"
            ))),
        }
    }
}

/// Runs one unlearning transaction against the run's current generation.
///
/// Affected shards resume from their earliest affected slice; unaffected
/// shards are carried into the new generation byte-identically. A shard
/// whose every point is now removed is dropped from the ensemble. A request
/// that would empty the whole run is rejected before anything is written.
pub fn execute_unlearn(run: &Run, request: &UnlearnRequest) -> Result<UnlearnOutcome> {
    let prev = run.current_generation()?;
    let removed_new = request.resolve(run.dataset())?;
    let mut cumulative = prev.removed.clone();
    cumulative.extend(removed_new.iter().copied());
    if cumulative.len() == run.dataset().len() {
        return Err(Error::InvalidRequest(
            "request would remove every remaining point in the run".into(),
        ));
    }

    let affected = affected_cells(run.plan(), request, run.dataset())?;
    let retained = run.partition_slices(&cumulative)?;
    let cfg = run.config();

    let next_id = prev.id + 1;
    let next_dir = run
        .root()
        .join("generations")
        .join(generation_dir_name(next_id));
    if next_dir.exists() {
        return Err(Error::Run(format!(
            "generation {next_id} already exists; transactions are serialized per run"
        )));
    }
    let next_store = CheckpointStore::create(&next_dir)?;
    let prev_store = prev.store()?;

    // Partition the previous generation's live shards.
    let mut untouched = Vec::new();
    let mut to_resume: Vec<(usize, usize)> = Vec::new(); // (shard, from_stage)
    let mut dropped = Vec::new();
    for &shard in &prev.live_shards {
        match affected.get(&shard) {
            None => untouched.push(shard),
            Some(&from_stage) => {
                if retained[shard].iter().all(|s| s.is_empty()) {
                    dropped.push(shard);
                } else {
                    to_resume.push((shard, from_stage));
                }
            }
        }
    }

    // Carry unaffected shards over byte-identically.
    for &shard in &untouched {
        next_store.copy_stages_from(&prev_store, shard, run.plan().r)?;
    }

    // Affected shards retrain in parallel; each owns its keyspace.
    let resume_results: Vec<Result<(usize, ModelParams, usize, u64)>> = to_resume
        .par_iter()
        .map(|&(shard, from_stage)| {
            next_store.copy_stages_from(&prev_store, shard, from_stage)?;
            let out = resume_shard(
                &prev_store,
                &next_store,
                shard,
                from_stage,
                &retained[shard],
                cfg,
            )?;
            Ok((shard, out.model, out.stages_executed, out.optimizer_steps))
        })
        .collect();

    let mut refreshed_models = BTreeMap::new();
    let mut stages_executed = 0;
    let mut steps_executed = 0u64;
    for r in resume_results {
        let (shard, model, stages, steps) = r?;
        refreshed_models.insert(shard, model);
        stages_executed += stages;
        steps_executed += steps;
    }

    let mut live_shards: Vec<usize> = untouched
        .iter()
        .copied()
        .chain(to_resume.iter().map(|&(s, _)| s))
        .collect();
    live_shards.sort_unstable();

    let baseline = full_retrain_baseline_steps(&retained, &live_shards, cfg);
    let savings_ratio = if baseline == 0 {
        0.0
    } else {
        1.0 - steps_executed as f64 / baseline as f64
    };
    let ledger = CostLedger {
        shards_retrained: to_resume.len(),
        stages_executed,
        optimizer_steps_executed: steps_executed,
        optimizer_steps_full_retrain_baseline: baseline,
        savings_ratio,
    };

    let gen = Generation::new(next_id, Some(prev.id), live_shards, cumulative, next_dir);
    run.write_merged(&gen)?;
    gen.write_meta()?;

    let outcome = UnlearnOutcome {
        request: request.clone(),
        removed_new,
        affected,
        refreshed_models,
        dropped_shards: dropped,
        ledger,
        generation_before: prev.id,
        generation_after: next_id,
    };
    outcome.to_manifest().save(&gen.dir().join("outcome.txt"))?;
    Ok(outcome)
}

/// One verification check with its outcome.
#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Audits an unlearning transaction after the fact:
///
/// (a) no removed point id appears in any training set of the new
///     generation, and every stored stage digest matches the point list the
///     stage should have been trained on;
/// (b) each refreshed shard's stored model is bit-identical to a
///     from-scratch retrain on its retained data (executed here, in a
///     scratch directory);
/// (c) shards untouched by the request are byte-identical across the two
///     generations.
pub fn verify_erasure(run: &Run, before_id: usize, after_id: usize) -> Result<VerifyReport> {
    let before = run.generation(before_id)?;
    let after = run.generation(after_id)?;
    if after.parent != Some(before.id) {
        return Err(Error::GenerationMismatch(format!(
            "generation {after_id} was not produced from generation {before_id}"
        )));
    }
    let outcome_manifest = Manifest::load(&after.dir().join("outcome.txt"))?;
    let request = UnlearnOutcome::request_from_manifest(&outcome_manifest)?;
    let removed_new = request.resolve(run.dataset())?;
    let affected = affected_cells(run.plan(), &request, run.dataset())?;

    let mut checks = Vec::new();
    let cfg = run.config();
    let retained = run.partition_slices(&after.removed)?;
    let after_store = after.store()?;
    let before_store = before.store()?;

    // (a) digests of the new generation reflect exactly the retained lists.
    let mut digest_ok = true;
    let mut digest_detail = String::new();
    for &shard in &after.live_shards {
        for stage in 0..run.plan().r {
            let expected_ids: Vec<u64> = retained[shard][..=stage]
                .iter()
                .flatten()
                .map(|p| p.point_id)
                .collect();
            if expected_ids.iter().any(|id| removed_new.contains(id)) {
                digest_ok = false;
                digest_detail = format!("removed point in shard {shard} stage {stage} list");
                break;
            }
            let ck = after_store.read_stage(&cfg.arch, shard, stage)?;
            if ck.digest != data_digest(&expected_ids) {
                digest_ok = false;
                digest_detail =
                    format!("shard {shard} stage {stage} digest does not match retained data");
                break;
            }
        }
    }
    checks.push(VerifyCheck {
        name: "no_removed_point_in_training_sets".into(),
        passed: digest_ok,
        detail: if digest_ok {
            format!(
                "{} stage digests match the retained point lists",
                after.live_shards.len() * run.plan().r
            )
        } else {
            digest_detail
        },
    });

    // (b) refreshed shards equal a from-scratch oracle retrain.
    let refreshed: Vec<usize> = after
        .live_shards
        .iter()
        .copied()
        .filter(|s| affected.contains_key(s))
        .collect();
    let mut oracle_ok = true;
    let mut oracle_detail = format!("{} shard(s) match the oracle retrain", refreshed.len());
    for &shard in &refreshed {
        let scratch = tempfile::tempdir()?;
        let oracle_store = CheckpointStore::create(scratch.path())?;
        let oracle = train_shard(&retained[shard], cfg, shard, &oracle_store)?;
        let stored = after_store.final_model(&cfg.arch, shard, run.plan().r)?;
        let same = oracle.model.params.len() == stored.params.len()
            && oracle
                .model
                .params
                .iter()
                .zip(stored.params.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            oracle_ok = false;
            oracle_detail = format!("shard {shard} differs from the from-scratch retrain");
            break;
        }
    }
    checks.push(VerifyCheck {
        name: "refreshed_shards_match_oracle_retrain".into(),
        passed: oracle_ok,
        detail: oracle_detail,
    });

    // (c) untouched shards are byte-identical across generations.
    let untouched: Vec<usize> = after
        .live_shards
        .iter()
        .copied()
        .filter(|s| !affected.contains_key(s))
        .collect();
    let mut untouched_ok = true;
    let mut untouched_detail = format!("{} shard(s) unchanged", untouched.len());
    'outer: for &shard in &untouched {
        for stage in 0..run.plan().r {
            for file in ["checkpoint.txt", "model.bin", "opt.bin"] {
                let a = std::fs::read(before_store.stage_dir(shard, stage).join(file))?;
                let b = std::fs::read(after_store.stage_dir(shard, stage).join(file))?;
                if a != b {
                    untouched_ok = false;
                    untouched_detail =
                        format!("shard {shard} stage {stage} {file} changed");
                    break 'outer;
                }
            }
        }
    }
    checks.push(VerifyCheck {
        name: "untouched_shards_unchanged".into(),
        passed: untouched_ok,
        detail: untouched_detail,
    });

    Ok(VerifyReport { checks })
}
