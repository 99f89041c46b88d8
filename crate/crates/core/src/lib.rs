//! Sharded, isolated, sliced, aggregated training with exact unlearning.
//!
//! A dataset is partitioned into K shards of R slices each; one constituent
//! model trains per shard in slice-incremental stages, checkpointing after
//! every stage. An erasure request touches only the shards holding removed
//! points, and those resume from their last unaffected checkpoint — the
//! result is bit-identical to never having trained on the removed points.
//! Inference aggregates the shard models by majority vote / mean output, or
//! by collapsing them into a single weight-averaged model that answers each
//! query with one forward pass.

pub mod aggregate;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
mod manifest;
pub mod model;
pub mod rng;
pub mod run;
pub mod sharding;
pub mod trainer;
pub mod unlearn;

pub use aggregate::{
    majority_vote, weight_average, AggregationMode, EnsembleModel, Prediction,
};
pub use data::{DataPoint, Dataset, Target};
pub use error::{Error, Result};
pub use harness::grid::{run_grid, EvalReport, GridConfig, GridOutput, Method, Phase};
pub use harness::metrics::{accuracy, macro_f1, mae, rmse};
pub use harness::synth::{gen_synthetic, SynthSpec, SynthTask};
pub use model::{
    adam_step, forward, init_model, loss_and_grad, param_count, Activation, AdamParams,
    ArchDescriptor, ModelParams, OptimizerState, TaskKind,
};
pub use rng::{RngPath, RngState, RngStream};
pub use run::{merged_model_of_run, Generation, Run};
pub use sharding::{
    affected_cells, make_shard_plan, retained_view, PlanMode, ShardPlan, UnlearnRequest,
};
pub use trainer::{
    resume_shard, train_shard, Checkpoint, CheckpointStore, ShardTrainOutcome, TrainConfig,
};
pub use unlearn::{execute_unlearn, verify_erasure, CostLedger, UnlearnOutcome, VerifyReport};
