#![allow(clippy::needless_range_loop)]

//! Acceptance suite. Each test covers one criterion end to end and prints a
//! PASS line; tolerances are pinned in the assertions.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sisa::harness::featurefile;
use sisa::harness::grid::{run_grid, GridConfig, Method, Phase};
use sisa::trainer::{stage_epochs, stage_steps, train_shard, CheckpointStore};
use sisa::{
    accuracy, execute_unlearn, gen_synthetic, loss_and_grad, macro_f1, mae, majority_vote,
    make_shard_plan, rmse, weight_average, Activation, ArchDescriptor, DataPoint, ModelParams,
    PlanMode, Run, RngPath, RngStream, SynthSpec, SynthTask, Target, TaskKind, TrainConfig,
    UnlearnRequest,
};

fn bits(m: &ModelParams) -> Vec<u64> {
    m.params.iter().map(|v| v.to_bits()).collect()
}

/// Deterministic run builder: walks seeds until user hashing fills every
/// shard, then trains.
fn build_run(
    dir: &Path,
    seed: u64,
    k: usize,
    r: usize,
    n: usize,
    users: usize,
    epochs: usize,
) -> Run {
    let mut s = seed;
    loop {
        let spec = SynthSpec {
            task: SynthTask::Classification {
                classes: 3,
                separation: 3.0,
            },
            n_points: n,
            n_users: users,
            dim: 6,
            seed: s,
        };
        let dataset = gen_synthetic(&spec).unwrap();
        match make_shard_plan(&dataset, k, r, s, PlanMode::UserAware) {
            Ok(plan) => {
                let arch = ArchDescriptor::new(
                    6,
                    vec![8],
                    TaskKind::Classification { classes: 3 },
                    Activation::Relu,
                )
                .unwrap();
                let mut cfg = TrainConfig::new(arch, s);
                cfg.epochs_total = epochs;
                return Run::create(dir, dataset, plan, cfg).unwrap();
            }
            Err(_) => s += 1000,
        }
    }
}

/// Criterion 1: over randomized (N, K, R, removal) cases, models after
/// `execute_unlearn` are bit-identical to from-scratch training on the
/// retained data under the same plan and seeds. Tolerance 0; < 60 s total.
#[test]
fn criterion_1_exact_unlearning_oracle() {
    let started = Instant::now();
    let mut picker = RngStream::new(RngPath::purpose(20260811, "acceptance-cases"));
    let k_choices = [2usize, 4, 8];
    let r_choices = [1usize, 2, 4];
    let cases = 20;

    for case in 0..cases {
        let n = 60 + picker.uniform_index(441); // 60..=500
        let k = k_choices[picker.uniform_index(3)];
        let r = r_choices[picker.uniform_index(3)];
        let users = (n / 10).max(5 * k);
        let remove_count = 1 + picker.uniform_index(3); // 1..=3
        let seed = picker.next_u64() % 100_000;

        let dir = tempfile::tempdir().unwrap();
        let run = build_run(&dir.path().join("run"), seed, k, r, n, users, 4);

        let mut user_ids = run.dataset().user_ids();
        user_ids.sort();
        let mut victims = BTreeSet::new();
        while victims.len() < remove_count {
            victims.insert(user_ids[picker.uniform_index(user_ids.len())].clone());
        }
        let request = UnlearnRequest::users(victims.clone()).unwrap();
        let outcome = execute_unlearn(&run, &request).unwrap();
        let gen = run.generation(outcome.generation_after).unwrap();

        // Oracle: retrain every live shard from scratch on the retained
        // data and demand bitwise equality.
        let retained = run.partition_slices(&gen.removed).unwrap();
        let oracle_dir = tempfile::tempdir().unwrap();
        let oracle_store = CheckpointStore::create(oracle_dir.path()).unwrap();
        let stored = run.final_models(&gen).unwrap();
        assert_eq!(
            stored.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
            gen.live_shards,
            "case {case}: live shard set"
        );
        let mut oracle_members = Vec::new();
        for (shard, stored_model) in &stored {
            let oracle = train_shard(&retained[*shard], run.config(), *shard, &oracle_store)
                .unwrap()
                .model;
            assert_eq!(
                bits(&oracle),
                bits(stored_model),
                "case {case}: shard {shard} differs from from-scratch retrain \
                 (n={n} k={k} r={r} removed={remove_count})"
            );
            oracle_members.push(oracle);
        }
        let merged = run.merged_model(&gen).unwrap();
        let oracle_merged = weight_average(&oracle_members).unwrap();
        assert_eq!(bits(&merged), bits(&oracle_merged), "case {case}: merged model");
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "oracle suite took {elapsed:?}, budget is 60 s"
    );
    println!("criterion 1 (exact-unlearning oracle, {cases} cases, {elapsed:?}): PASS");
}

/// Criterion 2: weight averaging matches a compensated-summation mean
/// within 1e-12 componentwise up to N = 64; N = 1 is bitwise identity;
/// incompatible architectures are rejected.
#[test]
fn criterion_2_weight_average_matches_compensated_mean() {
    let arch = ArchDescriptor::new(
        4,
        vec![8],
        TaskKind::Classification { classes: 3 },
        Activation::Relu,
    )
    .unwrap();
    let mut rng = RngStream::new(RngPath::purpose(2, "acceptance-merge"));
    let dim = sisa::param_count(&arch);

    for n in [1usize, 2, 3, 5, 8, 17, 33, 64] {
        let members: Vec<ModelParams> = (0..n)
            .map(|_| {
                let params: Vec<f64> = (0..dim).map(|_| 10.0 * rng.standard_normal()).collect();
                ModelParams::new(arch.clone(), params).unwrap()
            })
            .collect();
        let avg = weight_average(&members).unwrap();
        if n == 1 {
            assert_eq!(bits(&avg), bits(&members[0]), "N=1 must be bitwise identity");
            continue;
        }
        for j in 0..dim {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for m in &members {
                let y = m.params[j] - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            let oracle = sum / n as f64;
            assert!(
                (avg.params[j] - oracle).abs() < 1e-12,
                "N={n} component {j}: {} vs {oracle}",
                avg.params[j]
            );
        }
    }

    let other_arch = ArchDescriptor::new(
        4,
        vec![8],
        TaskKind::Classification { classes: 4 },
        Activation::Relu,
    )
    .unwrap();
    let incompatible = vec![
        ModelParams::zeros(arch.clone()),
        ModelParams::zeros(other_arch),
    ];
    assert!(weight_average(&incompatible).is_err());
    println!("criterion 2 (weight-average merge vs compensated mean): PASS");
}

/// Criterion 3: analytic gradients match central finite differences
/// (h = 1e-5) within 1e-6 componentwise on random networks of at most 500
/// parameters, for both tasks.
#[test]
fn criterion_3_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(RngPath::purpose(3, "acceptance-grad"));
    let h = 1e-5;
    let mut checked = 0;

    let archs = vec![
        ArchDescriptor::new(3, vec![], TaskKind::Classification { classes: 2 }, Activation::Relu),
        ArchDescriptor::new(5, vec![7], TaskKind::Classification { classes: 4 }, Activation::Relu),
        ArchDescriptor::new(4, vec![6, 5], TaskKind::Classification { classes: 3 }, Activation::Tanh),
        ArchDescriptor::new(8, vec![16], TaskKind::Classification { classes: 6 }, Activation::Tanh),
        ArchDescriptor::new(2, vec![], TaskKind::Regression, Activation::Relu),
        ArchDescriptor::new(6, vec![9], TaskKind::Regression, Activation::Tanh),
        ArchDescriptor::new(5, vec![8, 7], TaskKind::Regression, Activation::Relu),
        ArchDescriptor::new(12, vec![20], TaskKind::Regression, Activation::Tanh),
    ];

    for arch in archs {
        let arch = arch.unwrap();
        let n_params = sisa::param_count(&arch);
        assert!(n_params <= 500, "criterion covers nets up to 500 params");
        let mut model = sisa::init_model(&arch, &mut rng);
        for p in model.params.iter_mut() {
            *p += 0.2 * rng.standard_normal();
        }
        let batch: Vec<DataPoint> = (0..6)
            .map(|i| DataPoint {
                point_id: i,
                user_id: "u".into(),
                features: (0..arch.input_dim).map(|_| rng.standard_normal()).collect(),
                target: match arch.task {
                    TaskKind::Classification { classes } => {
                        Target::Class(rng.uniform_index(classes))
                    }
                    TaskKind::Regression => Target::Value(rng.standard_normal()),
                },
            })
            .collect();
        let refs: Vec<&DataPoint> = batch.iter().collect();
        let (_, analytic) = loss_and_grad(&model, &refs).unwrap();

        let mut max_err = 0.0f64;
        for i in 0..n_params {
            let mut plus = model.clone();
            plus.params[i] += h;
            let mut minus = model.clone();
            minus.params[i] -= h;
            let (lp, _) = loss_and_grad(&plus, &refs).unwrap();
            let (lm, _) = loss_and_grad(&minus, &refs).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            max_err = max_err.max((analytic[i] - numeric).abs());
        }
        assert!(
            max_err < 1e-6,
            "arch {arch:?}: max gradient error {max_err}"
        );
        checked += 1;
    }
    println!("criterion 3 (gradient vs finite differences, {checked} networks): PASS");
}

/// Criterion 4: for K=4, R=2 with equal slices, removing a point whose
/// earliest affected slice is stage 1 executes exactly the analytic stage-1
/// step count of that shard, and the savings ratio matches the closed form
/// within 1e-9.
#[test]
fn criterion_4_cost_ledger_closed_form() {
    // 256 points dealt randomly over K=4, R=2 gives every shard 64 points
    // in two 32-point slices.
    let spec = SynthSpec {
        task: SynthTask::Classification {
            classes: 3,
            separation: 3.0,
        },
        n_points: 256,
        n_users: 32,
        dim: 6,
        seed: 4,
    };
    let dataset = gen_synthetic(&spec).unwrap();
    let plan = make_shard_plan(&dataset, 4, 2, 4, PlanMode::Random).unwrap();
    for shard in 0..4 {
        assert_eq!(plan.slice_sizes(shard), vec![32, 32], "equal slices");
    }
    let arch = ArchDescriptor::new(
        6,
        vec![8],
        TaskKind::Classification { classes: 3 },
        Activation::Relu,
    )
    .unwrap();
    let cfg = TrainConfig::new(arch, 4); // epochs 20, batch 32
    let dir = tempfile::tempdir().unwrap();
    let run = Run::create(dir.path().join("run"), dataset, plan, cfg).unwrap();

    // A point sitting in slice 1 of some shard.
    let victim_shard = 2;
    let victim = run.plan().cell_points(victim_shard, 1)[0];
    let request = UnlearnRequest::points([victim]).unwrap();
    let outcome = execute_unlearn(&run, &request).unwrap();

    assert_eq!(outcome.affected, [(victim_shard, 1)].into_iter().collect());
    assert_eq!(outcome.ledger.shards_retrained, 1);
    assert_eq!(outcome.ledger.stages_executed, 1);

    // Analytic stage-1 step count for the affected shard: e_1 epochs over
    // ceil(63 / 32) batches.
    let epochs = stage_epochs(20, 2);
    let executed_expected = stage_steps(63, epochs[1], 32);
    assert_eq!(outcome.ledger.optimizer_steps_executed, executed_expected);

    // Closed-form baseline: three untouched shards cost stage0 + stage1 on
    // 32 and 64 points; the affected shard costs stage0 on 32 and stage1 on
    // 63 retained points.
    let untouched = stage_steps(32, epochs[0], 32) + stage_steps(64, epochs[1], 32);
    let affected = stage_steps(32, epochs[0], 32) + stage_steps(63, epochs[1], 32);
    let baseline_expected = 3 * untouched + affected;
    assert_eq!(
        outcome.ledger.optimizer_steps_full_retrain_baseline,
        baseline_expected
    );
    let ratio_expected = 1.0 - executed_expected as f64 / baseline_expected as f64;
    assert!(
        (outcome.ledger.savings_ratio - ratio_expected).abs() < 1e-9,
        "savings {} vs closed form {ratio_expected}",
        outcome.ledger.savings_ratio
    );
    println!(
        "criterion 4 (cost ledger: {executed_expected} steps executed, savings {:.6}): PASS",
        outcome.ledger.savings_ratio
    );
}

/// Criterion 5: majority vote matches an exhaustive brute-force tally for
/// every vote multiset with N <= 5 and C <= 4 (ties to the lowest index),
/// and the metric implementations match brute-force oracles on 1000 random
/// cases (exact for counting metrics, 1e-12 for real ones).
#[test]
fn criterion_5_aggregation_and_metric_oracles() {
    // Exhaustive vote check.
    let mut vote_cases = 0u64;
    for classes in 2..=4usize {
        for n in 1..=5usize {
            let total = classes.pow(n as u32);
            for code in 0..total {
                let mut votes = Vec::with_capacity(n);
                let mut rest = code;
                for _ in 0..n {
                    votes.push(rest % classes);
                    rest /= classes;
                }
                // Brute-force oracle: scan classes in ascending order and
                // keep the first with the strictly largest count.
                let mut best = 0usize;
                let mut best_count = 0usize;
                for c in 0..classes {
                    let count = votes.iter().filter(|&&v| v == c).count();
                    if count > best_count {
                        best = c;
                        best_count = count;
                    }
                }
                assert_eq!(
                    majority_vote(&votes, classes).unwrap(),
                    best,
                    "votes {votes:?} over {classes} classes"
                );
                vote_cases += 1;
            }
        }
    }

    // Randomized metric oracles.
    let mut rng = RngStream::new(RngPath::purpose(5, "acceptance-metrics"));
    for _ in 0..1000 {
        let len = 1 + rng.uniform_index(40);
        let classes = 2 + rng.uniform_index(5);
        let preds: Vec<usize> = (0..len).map(|_| rng.uniform_index(classes)).collect();
        let truth: Vec<usize> = (0..len).map(|_| rng.uniform_index(classes)).collect();

        // accuracy: integer-count oracle, exact equality.
        let hits = preds
            .iter()
            .zip(&truth)
            .filter(|(a, b)| a == b)
            .count();
        assert_eq!(accuracy(&preds, &truth).unwrap(), hits as f64 / len as f64);

        // macro F1 via an explicit confusion matrix.
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in preds.iter().zip(&truth) {
            confusion[t][p] += 1;
        }
        let mut sum = 0.0;
        let mut present = 0;
        for c in 0..classes {
            let tp = confusion[c][c];
            let truth_count: usize = confusion[c].iter().sum();
            if truth_count == 0 {
                continue;
            }
            present += 1;
            let pred_count: usize = (0..classes).map(|t| confusion[t][c]).sum();
            let precision = if pred_count == 0 {
                0.0
            } else {
                tp as f64 / pred_count as f64
            };
            let recall = tp as f64 / truth_count as f64;
            if precision + recall > 0.0 {
                sum += 2.0 * precision * recall / (precision + recall);
            }
        }
        let oracle_f1 = sum / present as f64;
        let got = macro_f1(&preds, &truth, classes).unwrap();
        assert!(
            (got - oracle_f1).abs() < 1e-12,
            "macro_f1 {got} vs oracle {oracle_f1}"
        );

        // mae / rmse on random reals.
        let p_real: Vec<f64> = (0..len).map(|_| 5.0 * rng.standard_normal()).collect();
        let t_real: Vec<f64> = (0..len).map(|_| 5.0 * rng.standard_normal()).collect();
        let mae_oracle =
            p_real.iter().zip(&t_real).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64;
        let rmse_oracle = (p_real
            .iter()
            .zip(&t_real)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / len as f64)
            .sqrt();
        assert!((mae(&p_real, &t_real).unwrap() - mae_oracle).abs() < 1e-12);
        assert!((rmse(&p_real, &t_real).unwrap() - rmse_oracle).abs() < 1e-12);
    }
    println!("criterion 5 (vote oracle over {vote_cases} multisets, 1000 metric cases): PASS");
}

fn walk_relative(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Criterion 6: the full grid on the seeded 600-point, 40-user, 16-dim,
/// 6-class dataset completes in under 2 minutes with every cell populated,
/// reruns byte-identically, and merged-model inference costs exactly one
/// forward pass per query.
#[test]
fn criterion_6_grid_reproduction() {
    let started = Instant::now();
    let spec = SynthSpec::parse("task=cls,n=600,users=40,d=16,classes=6,sep=4,seed=7").unwrap();
    let dataset = gen_synthetic(&spec).unwrap();
    let cfg = GridConfig::default();

    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let grid_a = run_grid(&dataset, &cfg, &out_a).unwrap();
    run_grid(&dataset, &cfg, &out_b).unwrap();

    // Structure: every cell of {SISA, SISA++} x {4, 8} x {1, 2 users}
    // after unlearning, plus one before cell per (method, K).
    assert_eq!(grid_a.failures().count(), 0, "no cell may fail");
    let reports: Vec<_> = grid_a.reports().collect();
    assert_eq!(reports.len(), 12);
    for method in Method::ALL {
        for k in [4usize, 8] {
            assert_eq!(
                reports
                    .iter()
                    .filter(|r| r.label.method == method
                        && r.label.shards == k
                        && r.label.phase == Phase::Before)
                    .count(),
                1
            );
            for users in [1usize, 2] {
                let after: Vec<_> = reports
                    .iter()
                    .filter(|r| r.label.method == method
                        && r.label.shards == k
                        && r.label.users_removed == users
                        && r.label.phase == Phase::After)
                    .collect();
                assert_eq!(after.len(), 1, "{method} k={k} u={users}");
                let r = after[0];
                assert!(r.metric_a.is_finite() && r.metric_b.is_finite());
                let ledger = r.ledger.as_ref().expect("after cells carry the ledger");
                assert_eq!(ledger.shards_retrained, users);
            }
        }
    }

    // Both methods evaluate the same trained members before unlearning.
    for k in [4usize, 8] {
        let queries: Vec<u64> = reports
            .iter()
            .filter(|r| r.label.shards == k && r.label.phase == Phase::Before)
            .map(|r| r.eval_queries)
            .collect();
        assert_eq!(queries, vec![120, 120]);
    }

    // Well-separated blobs are easy: the merged model clears 0.9 test
    // accuracy under the default config (loose threshold from an
    // exploratory run).
    for r in &reports {
        if r.label.method == Method::SisaPlusPlus && r.label.phase == Phase::Before {
            assert!(
                r.metric_a >= 0.9,
                "merged before-accuracy {} below 0.9 at k={}",
                r.metric_a,
                r.label.shards
            );
        }
    }

    // Merged inference is one forward pass per query; the vote ensemble
    // pays one per member.
    for r in &reports {
        match r.label.method {
            Method::SisaPlusPlus => assert_eq!(
                r.eval_forward_passes, r.eval_queries,
                "merged inference must cost exactly one forward pass per query"
            ),
            Method::Sisa => assert_eq!(
                r.eval_forward_passes,
                r.eval_queries * r.label.shards as u64
            ),
        }
    }

    // Direct instrumentation on a produced run, independent of the reports.
    let run = Run::open(out_a.join("runs").join("k8").join("u1")).unwrap();
    let gen = run.current_generation().unwrap();
    let merged = run.merged_model(&gen).unwrap();
    let probe: Vec<f64> = vec![0.0; 16];
    let fp0 = sisa::model::forward_passes_on_thread();
    for _ in 0..25 {
        sisa::forward(&merged, &probe).unwrap();
    }
    assert_eq!(sisa::model::forward_passes_on_thread() - fp0, 25);

    // Byte-identical rerun.
    let tree_a = walk_relative(&out_a);
    let tree_b = walk_relative(&out_b);
    assert_eq!(tree_a.len(), tree_b.len());
    for ((path_a, bytes_a), (path_b, bytes_b)) in tree_a.iter().zip(tree_b.iter()) {
        assert_eq!(path_a, path_b);
        assert_eq!(bytes_a, bytes_b, "{} differs between reruns", path_a.display());
    }

    // The summary table carries every cell exactly once.
    let summary = std::fs::read_to_string(&grid_a.summary_path).unwrap();
    assert_eq!(summary.matches(" before ").count(), 4);
    assert_eq!(summary.matches(" after ").count(), 8);
    assert!(summary.contains("failed=0"));

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "grid (run twice) took {elapsed:?}, budget is 2 min per run"
    );
    println!("criterion 6 (grid reproduction, 12 cells x 2 runs in {elapsed:?}): PASS");
}

/// Criterion 7: unlearning users {a} then {b} equals unlearning {a, b} in
/// one transaction, bitwise, across 10 seeded cases.
#[test]
fn criterion_7_sequential_composition() {
    for case in 0..10u64 {
        let base = tempfile::tempdir().unwrap();
        let seed = 300 + case;
        let run_seq = build_run(&base.path().join("seq"), seed, 4, 2, 120, 24, 4);
        let run_batch = build_run(&base.path().join("batch"), seed, 4, 2, 120, 24, 4);
        assert_eq!(run_seq.dataset(), run_batch.dataset());

        let mut users = run_seq.dataset().user_ids();
        users.sort();
        let a = users[(case as usize) % users.len()].clone();
        let b = users[(case as usize + 7) % users.len()].clone();
        assert_ne!(a, b);

        execute_unlearn(&run_seq, &UnlearnRequest::users([a.clone()]).unwrap()).unwrap();
        execute_unlearn(&run_seq, &UnlearnRequest::users([b.clone()]).unwrap()).unwrap();
        execute_unlearn(&run_batch, &UnlearnRequest::users([a, b]).unwrap()).unwrap();

        let gen_seq = run_seq.current_generation().unwrap();
        let gen_batch = run_batch.current_generation().unwrap();
        assert_eq!(gen_seq.removed, gen_batch.removed);
        assert_eq!(gen_seq.live_shards, gen_batch.live_shards);

        let models_seq = run_seq.final_models(&gen_seq).unwrap();
        let models_batch = run_batch.final_models(&gen_batch).unwrap();
        for ((sa, ma), (sb, mb)) in models_seq.iter().zip(models_batch.iter()) {
            assert_eq!(sa, sb);
            assert_eq!(bits(ma), bits(mb), "case {case}: shard {sa}");
        }
        let merged_seq = run_seq.merged_model(&gen_seq).unwrap();
        let merged_batch = run_batch.merged_model(&gen_batch).unwrap();
        assert_eq!(bits(&merged_seq), bits(&merged_batch), "case {case}: merged");
    }
    println!("criterion 7 (sequential composition, 10 cases): PASS");
}

/// The feature-file round trip the external interface promises: write,
/// read back, bit-identical dataset and bytes.
#[test]
fn feature_file_round_trip_supports_the_interfaces() {
    let spec = SynthSpec::parse("task=reg,n=50,users=10,d=3,noise=0.1,seed=8").unwrap();
    let dataset = gen_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.features");
    featurefile::write(&path, &dataset).unwrap();
    let back = featurefile::read(&path).unwrap();
    assert_eq!(back, dataset);
    let again = dir.path().join("again.features");
    featurefile::write(&again, &back).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}
