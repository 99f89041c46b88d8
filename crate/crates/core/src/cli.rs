//! Command-line interface: plan, train, unlearn, verify, infer, eval,
//! synth and bench subcommands over the run-directory layout.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::aggregate::{AggregationMode, EnsembleModel, Prediction};
use crate::harness::grid::{run_grid, GridConfig};
use crate::harness::synth::{gen_synthetic, SynthSpec};
use crate::harness::{featurefile, metrics};
use crate::manifest::{join_list, Manifest};
use crate::model::TaskKind;
use crate::run::Run;
use crate::sharding::{make_shard_plan, PlanMode, ShardPlan, UnlearnRequest};
use crate::trainer::TrainConfigFile;
use crate::unlearn::{execute_unlearn, verify_erasure};

#[derive(Parser)]
#[command(
    name = "sisa",
    about = "Sharded training with exact unlearning and weight-averaged merging",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic feature file
    Synth(SynthArgs),
    /// Build a shard plan for a feature file
    Plan(PlanArgs),
    /// Train one constituent model per shard, checkpointing every slice stage
    Train(TrainArgs),
    /// Remove users or points from a trained run, retraining only affected shards
    Unlearn(UnlearnArgs),
    /// Audit an unlearning transaction against a from-scratch oracle
    Verify(VerifyArgs),
    /// Predict for a feature file with a chosen aggregation
    Infer(InferArgs),
    /// Evaluate a run's current generation on a held-out feature file
    Eval(EvalArgs),
    /// Run the full comparison grid on a feature file or synthetic data
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Spec string, e.g. task=cls,n=600,users=40,d=16,classes=6,sep=4,seed=7
    #[arg(long)]
    spec: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    shards: usize,
    #[arg(long, default_value_t = 2)]
    slices: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ignore user ownership and deal points by seeded shuffle
    #[arg(long)]
    random: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// TOML train config; [arch] is derived from the data when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UnlearnArgs {
    #[arg(long)]
    run: PathBuf,
    /// Comma-separated user ids to erase
    #[arg(long, value_delimiter = ',')]
    remove_users: Vec<String>,
    /// Comma-separated point ids to erase
    #[arg(long, value_delimiter = ',')]
    remove_points: Vec<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Generation directory the transaction started from
    #[arg(long)]
    before: PathBuf,
    /// Generation directory the transaction produced
    #[arg(long)]
    after: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    run: PathBuf,
    /// vote | mean | merge
    #[arg(long)]
    mode: String,
    #[arg(long)]
    input: PathBuf,
    /// Predictions file, one prediction per input row
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Feature file to benchmark on
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Synthetic spec string (see `sisa synth --spec`)
    #[arg(long)]
    synth: Option<String>,
    /// Grid TOML; defaults to 4/8 shards, 1/2 users, 80:20 split
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn main() -> anyhow::Result<()> {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Plan(args) => plan(args),
        Command::Train(args) => train(args),
        Command::Unlearn(args) => unlearn(args),
        Command::Verify(args) => verify(args),
        Command::Infer(args) => infer(args),
        Command::Eval(args) => eval(args),
        Command::Bench(args) => bench(args),
    }
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec::parse(&args.spec)?;
    let dataset = gen_synthetic(&spec)?;
    featurefile::write(&args.out, &dataset)?;
    println!(
        "wrote {} points ({} users, d={}) to {}",
        dataset.len(),
        dataset.user_ids().len(),
        dataset.feature_dim(),
        args.out.display()
    );
    Ok(())
}

fn plan(args: PlanArgs) -> anyhow::Result<()> {
    let dataset = featurefile::read(&args.data)?;
    let mode = if args.random {
        PlanMode::Random
    } else {
        PlanMode::UserAware
    };
    let plan = make_shard_plan(&dataset, args.shards, args.slices, args.seed, mode)?;
    plan.write(&args.out)?;
    let sizes = plan.shard_sizes();
    println!(
        "plan: k={} r={} mode={} points={}",
        plan.k,
        plan.r,
        plan.mode,
        plan.n_points()
    );
    for (shard, size) in sizes.iter().enumerate() {
        println!("shard {shard}: {size} points, slices {:?}", plan.slice_sizes(shard));
    }
    let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if *min * 2 < *max {
        println!("warning: shard sizes are imbalanced (min {min}, max {max}); hashing is not rebalanced");
    }
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let dataset = featurefile::read(&args.data)?;
    let plan = ShardPlan::read(&args.plan)?;
    let file_cfg: TrainConfigFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => toml::from_str("").expect("defaults parse"),
    };
    let file_cfg = if file_cfg.arch.is_some() {
        file_cfg
    } else {
        file_cfg.with_arch(dataset.feature_dim(), dataset.task())?
    };
    let origin = args
        .config
        .clone()
        .unwrap_or_else(|| PathBuf::from("<defaults>"));
    let cfg = file_cfg.resolve(&origin)?;
    let run = Run::create(&args.out, dataset, plan, cfg)?;
    let gen = run.current_generation()?;
    println!(
        "trained {} shards into {} (generation {})",
        gen.live_shards.len(),
        run.root().display(),
        gen.id
    );
    Ok(())
}

fn unlearn(args: UnlearnArgs) -> anyhow::Result<()> {
    let request = match (args.remove_users.is_empty(), args.remove_points.is_empty()) {
        (false, true) => UnlearnRequest::users(args.remove_users)?,
        (true, false) => UnlearnRequest::points(args.remove_points)?,
        _ => bail!("give exactly one of --remove-users or --remove-points"),
    };
    let run = Run::open(&args.run)?;
    let outcome = execute_unlearn(&run, &request)?;
    print!("{}", outcome.to_manifest().to_text());
    if !outcome.dropped_shards.is_empty() {
        println!(
            "note: shard(s) {} emptied and dropped from the ensemble",
            join_list(outcome.dropped_shards.iter())
        );
    }
    Ok(())
}

fn generation_id_of(dir: &Path) -> anyhow::Result<(PathBuf, usize)> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .context("generation path has no name")?;
    let id: usize = name
        .strip_prefix("gen-")
        .and_then(|s| s.parse().ok())
        .with_context(|| format!("{name:?} is not a generation directory (gen-NNNN)"))?;
    let root = dir
        .parent()
        .and_then(Path::parent)
        .context("generation directory has no run root")?;
    Ok((root.to_path_buf(), id))
}

fn verify(args: VerifyArgs) -> anyhow::Result<()> {
    let (root_before, before) = generation_id_of(&args.before)?;
    let (root_after, after) = generation_id_of(&args.after)?;
    if root_before != root_after {
        bail!("generations belong to different runs");
    }
    let run = Run::open(&root_before)?;
    let report = verify_erasure(&run, before, after)?;
    for check in &report.checks {
        println!(
            "{}: {} ({})",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    if !report.passed() {
        bail!("verification failed");
    }
    Ok(())
}

fn infer(args: InferArgs) -> anyhow::Result<()> {
    let run = Run::open(&args.run)?;
    let gen = run.current_generation()?;
    let mode = AggregationMode::parse(&args.mode)?;
    let ensemble = match mode {
        AggregationMode::WeightAverage => {
            // Answer from the generation's cached merged model: one forward
            // pass per query regardless of shard count.
            EnsembleModel::new(vec![run.merged_model(&gen)?], AggregationMode::WeightAverage)?
        }
        other => run.ensemble(&gen, other)?,
    };
    let input = featurefile::read(&args.input)?;
    if input.feature_dim() != run.dataset().feature_dim() {
        bail!(
            "input has {} features, run expects {}",
            input.feature_dim(),
            run.dataset().feature_dim()
        );
    }
    let mut out = String::new();
    for p in input.points() {
        match ensemble.predict(&p.features)? {
            Prediction::Class(c) => out.push_str(&c.to_string()),
            Prediction::Value(v) => out.push_str(&v.to_string()),
        }
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    println!(
        "wrote {} predictions to {}",
        input.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let run = Run::open(&args.run)?;
    let gen = run.current_generation()?;
    let test = featurefile::read(&args.test)?;
    if test.task() != run.dataset().task() {
        bail!("test task does not match the run task");
    }

    let mut report = Manifest::new();
    report.set("generation", gen.id);
    report.set("test_points", test.len());
    let modes: &[(&str, AggregationMode)] = if test.task().is_classification() {
        &[
            ("vote", AggregationMode::MajorityVote),
            ("merge", AggregationMode::WeightAverage),
        ]
    } else {
        &[
            ("mean", AggregationMode::MeanPrediction),
            ("merge", AggregationMode::WeightAverage),
        ]
    };
    for (name, mode) in modes {
        let ensemble = match mode {
            AggregationMode::WeightAverage => EnsembleModel::new(
                vec![run.merged_model(&gen)?],
                AggregationMode::WeightAverage,
            )?,
            other => run.ensemble(&gen, *other)?,
        };
        let preds = ensemble.predict_dataset(&test)?;
        match test.task() {
            TaskKind::Classification { classes } => {
                let labels: Vec<usize> = preds
                    .iter()
                    .map(|p| match p {
                        Prediction::Class(c) => *c,
                        Prediction::Value(_) => unreachable!(),
                    })
                    .collect();
                let truth: Vec<usize> = test
                    .points()
                    .iter()
                    .map(|p| p.target.class().unwrap())
                    .collect();
                report.set(
                    format!("{name}_accuracy").as_str(),
                    metrics::accuracy(&labels, &truth)?,
                );
                report.set(
                    format!("{name}_macro_f1").as_str(),
                    metrics::macro_f1(&labels, &truth, classes)?,
                );
            }
            TaskKind::Regression => {
                let values: Vec<f64> = preds
                    .iter()
                    .map(|p| match p {
                        Prediction::Value(v) => *v,
                        Prediction::Class(_) => unreachable!(),
                    })
                    .collect();
                let truth: Vec<f64> = test
                    .points()
                    .iter()
                    .map(|p| p.target.value().unwrap())
                    .collect();
                report.set(
                    format!("{name}_mae").as_str(),
                    metrics::mae(&values, &truth)?,
                );
                report.set(
                    format!("{name}_rmse").as_str(),
                    metrics::rmse(&values, &truth)?,
                );
            }
        }
    }
    print!("{}", report.to_text());
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let cfg = match &args.grid {
        Some(path) => GridConfig::load(path)?,
        None => GridConfig::default(),
    };
    std::fs::create_dir_all(&args.out)?;
    let dataset = match (&args.data, &args.synth) {
        (Some(path), None) => featurefile::read(path)?,
        (None, Some(spec)) => {
            let dataset = gen_synthetic(&SynthSpec::parse(spec)?)?;
            featurefile::write(&args.out.join("data.features"), &dataset)?;
            dataset
        }
        _ => bail!("give exactly one of --data or --synth"),
    };
    let output = run_grid(&dataset, &cfg, &args.out)?;
    print!("{}", std::fs::read_to_string(&output.summary_path)?);
    let failures: Vec<_> = output.failures().collect();
    if !failures.is_empty() {
        println!("{} cell(s) failed; see summary for details", failures.len());
    }
    Ok(())
}
