//! Acceptance suite. Runs as a plain binary so every criterion prints its
//! own PASS/FAIL line; exits non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use icon_cli::commands::{build_dataset, cmd_run, run_all_seeds, ABLATION_GRID};
use icon_cli::config::RunConfig;
use icon_core::cast::{
    cast_loss, cast_loss_with_plan, cast_plan, compute_shift, recluster, ShiftPool, ShiftVector,
};
use icon_core::classifier_ic::{
    compute_threshold, decide_expansions, AccuracyHistory, DistillScope, ExpansionDecision,
    ExpansionKind, IncrementalClassifier, ThresholdMode,
};
use icon_core::metrics::{average_accuracy, forgetting, EvalMatrix};
use icon_core::model::{Branch, Model, ModelConfig};
use icon_core::numerics::{
    finite_difference_gradient, kmeans, kmeans_traced, RngState, FD_STEP, KMEANS_MAX_ITERS,
    KMEANS_RESTARTS,
};
use icon_core::scenario::{ScenarioKind, TaskDomain, TaskSpec};
use icon_core::trainer::{total_objective, BatchItem, ObjectiveContext, RunSummary, TrainerConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// Criterion 1
const FD_CONFIGS: usize = 20;
const FD_REL_TOL: f64 = 1e-4;
const FD_ABS_TOL: f64 = 1e-7;
const FD_BUDGET: Duration = Duration::from_secs(30);
// Criterion 2
const CAST_FIXTURE_LOSS: f64 = -0.43096;
const CAST_FIXTURE_TOL: f64 = 1e-5;
const WEIGHT_SUM_TOL: f64 = 1e-9;
const SCALE_INVARIANCE_TOL: f64 = 1e-12;
// Criterion 3
const KMEANS_TOL: f64 = 1e-12;
// Criterion 4
const THRESHOLD_TRIPLES: usize = 1000;
const THRESHOLD_TOL: f64 = 1e-12;
const REFERENCE_GAMMA: f64 = 2.0;
const REFERENCE_CONST_THRESHOLD: f64 = 0.5;
// Criterion 6
const ABLATION_MIN_GAIN: f64 = 0.03;
const ABLATION_BUDGET: Duration = Duration::from_secs(25 * 60);
const FIXTURE: &str = "vil_small";
// Criterion 9
const GD_STEPS: usize = 50;
const GD_TOL: f64 = 1e-10;

fn main() {
    let checks: [Criterion; 9] = [
        ("gradient exactness", gradient_exactness),
        ("shift-loss fixtures", cast_fixtures),
        ("k-means", kmeans_checks),
        ("threshold oracle", threshold_oracle),
        ("metrics oracle", metrics_oracle),
        ("directional ablation", directional_ablation),
        ("node-growth bounds", node_growth),
        ("determinism", determinism),
        ("accumulated-gradient identity", gradient_descent_identity),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS {detail} [{elapsed:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL {detail} [{elapsed:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_subset(rng: &mut RngState, n: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..n).filter(|_| rng.uniform() < 0.5).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn gradient_exactness() -> Check {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for case in 0..FD_CONFIGS {
        let mut rng = RngState::new(7000 + case as u64);
        let d0 = 2 + rng.index(7);
        let h = 2 + rng.index(7);
        let r = 1 + rng.index(2);
        let layers = 1 + rng.index(3);
        let mut cfg = ModelConfig::new(d0, h, layers, r);
        cfg.adapter_layers = random_subset(&mut rng, layers);
        let mut model = Model::new(cfg, &mut rng).unwrap();

        let num_classes = 2 + rng.index(3);
        let old = random_subset(&mut rng, num_classes);
        let current = random_subset(&mut rng, num_classes);
        let mut classifier = IncrementalClassifier::new();
        let t_old = TaskSpec::new(0, TaskDomain::Single(0), old.clone()).unwrap();
        classifier.admit_new_classes(&mut model, &t_old);
        let n = model.trainable_len();
        model.set_trainable_flat(&rng.gaussian_vec(n, 0.5)).unwrap();
        let teacher = model.clone();

        let t_cur = TaskSpec::new(1, TaskDomain::Single(1), current.clone()).unwrap();
        let decisions: Vec<ExpansionDecision> = t_cur
            .class_ids
            .iter()
            .map(|&c| ExpansionDecision {
                class_id: c,
                kind: if !old.contains(&c) {
                    ExpansionKind::NewClass
                } else if rng.uniform() < 0.5 {
                    ExpansionKind::Expand
                } else {
                    ExpansionKind::Keep
                },
                warmup_acc: None,
                p: None,
                delta: None,
            })
            .collect();
        let expanded = classifier.apply_expansions(&mut model, &t_cur, &decisions);
        let n = model.trainable_len();
        model.set_trainable_flat(&rng.gaussian_vec(n, 0.5)).unwrap();

        let adapters = model.adapters().flatten();
        let a_prev: Vec<f64> = adapters.iter().map(|a| a + 0.3 * rng.normal()).collect();
        let mut pool = ShiftPool::new(2, 3);
        for j in 0..6 {
            pool.push(ShiftVector::new(
                rng.gaussian_vec(adapters.len(), 1.0),
                j / 3,
                j % 3,
            ));
        }
        recluster(&mut pool, &mut rng);
        let v = compute_shift(&adapters, &a_prev).unwrap();
        let plan = cast_plan(&v, &pool).ok_or(format!("config {case}: no shift-loss plan"))?;

        let xs: Vec<Vec<f64>> = (0..3).map(|_| rng.gaussian_vec(d0, 1.0)).collect();
        let teacher_logits: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| teacher.logits(x, Branch::Online).unwrap())
            .collect();
        let batch: Vec<BatchItem> = xs
            .iter()
            .zip(&teacher_logits)
            .map(|(x, t)| BatchItem {
                x,
                label: t_cur.class_ids[rng.index(t_cur.class_ids.len())],
                teacher: Some(t),
            })
            .collect();
        let ctx = ObjectiveContext {
            groups: classifier.groups(),
            task_classes: &t_cur.class_ids,
            expanded: &expanded,
            scope: if case % 2 == 0 {
                DistillScope::Unselected
            } else {
                DistillScope::All
            },
            alpha: rng.uniform_range(0.0, 2.0),
            beta: rng.uniform_range(0.1, 2.0),
            pool: &pool,
            a_prev: &a_prev,
            cast_plan: Some(&plan),
        };
        let obj = total_objective(&model, &batch, &ctx).unwrap();
        let mut analytic = obj.grad.adapters.clone();
        analytic.extend(&obj.grad.head);
        let mut probe = model.clone();
        let fd = finite_difference_gradient(
            |t| {
                probe.set_trainable_flat(t).unwrap();
                total_objective(&probe, &batch, &ctx).unwrap().total
            },
            &model.trainable_flat(),
            FD_STEP,
        );
        for (k, (a, f)) in analytic.iter().zip(&fd).enumerate() {
            let scale = a.abs().max(f.abs());
            let diff = (a - f).abs();
            if scale * FD_REL_TOL < FD_ABS_TOL {
                ensure!(
                    diff < FD_ABS_TOL,
                    "config {case} param {k}: |{a} - {f}| >= {FD_ABS_TOL}"
                );
            } else {
                let rel = diff / scale;
                ensure!(
                    rel < FD_REL_TOL,
                    "config {case} param {k}: rel err {rel:.3e}"
                );
                worst = worst.max(rel);
            }
            checked += 1;
        }
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < FD_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "max rel err {worst:.2e} over {checked} params in {FD_CONFIGS} configs"
    ))
}

fn cast_fixtures() -> Check {
    // v sits in cluster 0 with a decoy; V1 and V2 form cluster 1.
    let pool = ShiftPool::from_parts(
        vec![
            ShiftVector::new(vec![2.0, -0.1], 0, 0),
            ShiftVector::new(vec![1.0, 1.0], 1, 0),
            ShiftVector::new(vec![-1.0, 0.0], 2, 0),
        ],
        vec![vec![2.0, -0.1], vec![0.0, 0.5]],
        vec![0, 1, 1],
        2,
        1,
    )
    .unwrap();
    let out = cast_loss(&[1.0, 0.0], &pool);
    ensure!(
        (out.loss - CAST_FIXTURE_LOSS).abs() <= CAST_FIXTURE_TOL,
        "hand fixture gave {}",
        out.loss
    );

    let mut rng = RngState::new(8100);
    let mut planned = 0;
    let mut worst_sum = 0.0f64;
    for trial in 0..100 {
        let dim = 2 + rng.index(9);
        let mut pool = ShiftPool::new(2 + rng.index(2), 2);
        for j in 0..(2 + rng.index(11)) {
            let scale = if rng.uniform() < 0.1 {
                0.0
            } else {
                rng.uniform_range(0.1, 5.0)
            };
            pool.push(ShiftVector::new(rng.gaussian_vec(dim, scale), j / 2, j % 2));
        }
        recluster(&mut pool, &mut rng);
        let v_scale = rng.uniform_range(0.01, 3.0);
        let v = rng.gaussian_vec(dim, v_scale);
        let out = cast_loss(&v, &pool);
        ensure!(
            (-1.0..=1.0).contains(&out.loss),
            "pool {trial}: loss {}",
            out.loss
        );
        let Some(plan) = out.plan else { continue };
        planned += 1;
        let sum: f64 = plan.terms.iter().map(|t| t.weight).sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        ensure!(
            (sum - 1.0).abs() <= WEIGHT_SUM_TOL,
            "pool {trial}: weights sum to {sum}"
        );

        let s = rng.uniform_range(0.01, 100.0);
        let scaled_v: Vec<f64> = v.iter().map(|x| x * s).collect();
        let scaled_shifts: Vec<ShiftVector> = pool
            .shifts()
            .iter()
            .map(|sv| {
                let f = rng.uniform_range(0.01, 100.0);
                ShiftVector::new(
                    sv.values.iter().map(|x| x * f).collect(),
                    sv.task_id,
                    sv.snapshot_idx,
                )
            })
            .collect();
        let scaled_pool = ShiftPool::from_parts(
            scaled_shifts,
            pool.centers().to_vec(),
            pool.assignments().to_vec(),
            pool.k_configured(),
            pool.shifts_per_task(),
        )
        .unwrap();
        let scaled = cast_loss_with_plan(&scaled_v, &scaled_pool, &plan);
        for (a, b) in out.cosines.iter().zip(&scaled.cosines) {
            ensure!(
                (a - b).abs() <= SCALE_INVARIANCE_TOL,
                "pool {trial}: cosine {a} vs {b}"
            );
        }
    }
    ensure!(
        planned >= 50,
        "only {planned} of 100 random pools produced a plan"
    );

    let empty = cast_loss(&[0.3, -0.2, 1.0], &ShiftPool::new(2, 3));
    ensure!(
        empty.loss == 0.0 && empty.grad.iter().all(|&g| g == 0.0),
        "empty pool is not vacuous"
    );
    let cfg = RunConfig::load("quick").unwrap();
    let dataset = build_dataset(&cfg).unwrap();
    for exp in run_all_seeds(&cfg, &dataset).unwrap() {
        let first = &exp.tasks[0].cast_losses;
        ensure!(
            !first.is_empty() && first.iter().all(|&l| l == 0.0),
            "first-task shift loss not zero"
        );
    }
    Ok(format!(
        "loss {:.5}, {planned} planned pools, max |sum w - 1| {worst_sum:.1e}",
        out.loss
    ))
}

/// Lowest within-cluster sum of squares over every labelling of `points`
/// into exactly `k` non-empty clusters, as a canonical partition.
fn exhaustive_partition(points: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut best = (Vec::new(), f64::INFINITY);
    for code in 0..k.pow(n as u32) {
        let labels: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        if (0..k).any(|c| !labels.contains(&c)) {
            continue;
        }
        let mut sse = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            let dim = members[0].len();
            let centroid: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                .collect();
            for p in members {
                sse += p
                    .iter()
                    .zip(&centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
        if sse < best.1 {
            best = (canonical(&labels), sse);
        }
    }
    best
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut seen = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

fn kmeans_checks() -> Check {
    let mut rng = RngState::new(8200);
    let mut traces = 0;
    for _ in 0..20 {
        let dim = 1 + rng.index(5);
        let pts: Vec<Vec<f64>> = (0..(5 + rng.index(30)))
            .map(|_| rng.gaussian_vec(dim, 2.0))
            .collect();
        let k = 1 + rng.index(4);
        let (_, all) = kmeans_traced(&pts, k, &mut rng, KMEANS_RESTARTS, KMEANS_MAX_ITERS).unwrap();
        for trace in &all {
            for w in trace.windows(2) {
                ensure!(
                    w[1] <= w[0] + KMEANS_TOL * w[0].max(1.0),
                    "objective rose {} -> {}",
                    w[0],
                    w[1]
                );
            }
            traces += 1;
        }

        let r = kmeans(&pts, 1, &mut rng, KMEANS_RESTARTS, KMEANS_MAX_ITERS).unwrap();
        for d in 0..dim {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64;
            ensure!(
                (r.centers[0][d] - mean).abs() <= KMEANS_TOL,
                "k=1 center {} vs mean {mean}",
                r.centers[0][d]
            );
        }
    }

    let mut fixtures = vec![vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 0.0],
        vec![10.0, 1.0],
    ]];
    for _ in 0..9 {
        let a = rng.gaussian_vec(2, 20.0);
        let b = rng.gaussian_vec(2, 20.0);
        let mut f: Vec<Vec<f64>> = Vec::new();
        for base in [&a, &a, &b, &b] {
            f.push(base.iter().map(|x| x + rng.normal() * 0.1).collect());
        }
        rng.shuffle(&mut f);
        fixtures.push(f);
    }
    for (i, pts) in fixtures.iter().enumerate() {
        let (oracle, _) = exhaustive_partition(pts, 2);
        let r = kmeans(pts, 2, &mut rng, KMEANS_RESTARTS, KMEANS_MAX_ITERS).unwrap();
        ensure!(
            canonical(&r.assignments) == oracle,
            "fixture {i}: {:?} vs oracle {oracle:?}",
            r.assignments
        );
    }
    Ok(format!(
        "{traces} monotone traces, {} four-point fixtures match",
        fixtures.len()
    ))
}

fn threshold_oracle() -> Check {
    let mut rng = RngState::new(8300);
    let mut with_reference_gamma = 0;
    for i in 0..THRESHOLD_TRIPLES {
        let prev: Vec<f64> = (0..(1 + rng.index(4)))
            .map(|_| rng.uniform_range(0.05, 1.0))
            .collect();
        let acc = rng.uniform();
        let gamma = if i % 4 == 0 {
            with_reference_gamma += 1;
            REFERENCE_GAMMA
        } else {
            rng.uniform_range(0.1, 5.0)
        };
        let mut mean = 0.0;
        for a in &prev {
            mean += a;
        }
        mean /= prev.len() as f64;
        let p = gamma * (mean - acc) / mean;
        let e = (2.0 * p).exp();
        let delta = (e - 1.0) / (e + 1.0);
        let t = compute_threshold(&prev, acc, gamma).unwrap();
        ensure!(
            (t.p - p).abs() <= THRESHOLD_TOL,
            "triple {i}: p {} vs {p}",
            t.p
        );
        ensure!(
            (t.delta - delta).abs() <= THRESHOLD_TOL,
            "triple {i}: delta {} vs {delta}",
            t.delta
        );
    }

    let defaults = TrainerConfig::default();
    ensure!(
        defaults.gamma == REFERENCE_GAMMA,
        "default gamma {}",
        defaults.gamma
    );
    let off = TrainerConfig {
        dynamic_threshold_enabled: false,
        ..defaults
    };
    ensure!(
        off.threshold_mode() == ThresholdMode::Constant(REFERENCE_CONST_THRESHOLD),
        "threshold-off mode is {:?}",
        off.threshold_mode()
    );
    let mut model = Model::new(ModelConfig::new(3, 4, 1, 1), &mut rng).unwrap();
    let mut classifier = IncrementalClassifier::new();
    classifier.admit_new_classes(
        &mut model,
        &TaskSpec::new(0, TaskDomain::Single(0), vec![0]).unwrap(),
    );
    let mut history = AccuracyHistory::new();
    history.record(0, TaskDomain::Single(0), 0.9);
    let task = TaskSpec::new(1, TaskDomain::Single(1), vec![0]).unwrap();
    for acc in [0.0, 0.3, 0.499, 0.5, 0.501, 0.95] {
        let warm = [(0, acc)].into_iter().collect();
        let d = &decide_expansions(
            &history,
            classifier.groups(),
            &task,
            &warm,
            off.threshold_mode(),
        )[0];
        ensure!(
            d.delta == Some(REFERENCE_CONST_THRESHOLD),
            "constant mode compared against {:?}",
            d.delta
        );
        let expect = if acc < REFERENCE_CONST_THRESHOLD {
            ExpansionKind::Expand
        } else {
            ExpansionKind::Keep
        };
        ensure!(d.kind == expect, "acc {acc}: {:?}", d.kind);
    }
    Ok(format!(
        "{THRESHOLD_TRIPLES} triples ({with_reference_gamma} at gamma 2), constant mode 0.5"
    ))
}

fn metrics_oracle() -> Check {
    let mut rng = RngState::new(8400);
    for trial in 0..200 {
        let t = if trial < 10 { 1 } else { 1 + rng.index(10) };
        let quantised = rng.uniform() < 0.5;
        let rows: Vec<Vec<f64>> = (1..=t)
            .map(|n| {
                (0..n)
                    .map(|_| {
                        if quantised {
                            rng.index(5) as f64 / 4.0
                        } else {
                            rng.uniform()
                        }
                    })
                    .collect()
            })
            .collect();
        let mut sum = 0.0;
        for a in &rows[t - 1] {
            sum += a;
        }
        let avg = sum / t as f64;
        let mut f = 0.0;
        if t > 1 {
            let mut total = 0.0;
            for i in 0..t - 1 {
                let mut best = rows[i][i];
                for row in &rows[i..t - 1] {
                    if row[i] > best {
                        best = row[i];
                    }
                }
                total += best - rows[t - 1][i];
            }
            f = total / (t - 1) as f64;
        }
        let m = EvalMatrix::from_rows(rows).unwrap();
        let got_a = average_accuracy(&m, t).unwrap();
        let got_f = forgetting(&m, t).unwrap();
        ensure!(got_a == avg, "matrix {trial}: A {got_a} vs {avg}");
        ensure!(got_f == f, "matrix {trial}: F {got_f} vs {f}");
        if t == 1 {
            ensure!(got_f == 0.0, "F_1 = {got_f}");
        }
    }
    Ok("200 matrices exact, F_1 = 0".into())
}

struct VariantRuns {
    label: &'static str,
    summaries: Vec<RunSummary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn fixture_config() -> RunConfig {
    RunConfig::load(FIXTURE).unwrap()
}

/// Every ablation variant on the reference fixture, computed once.
fn ablation_runs() -> &'static (Vec<VariantRuns>, Duration) {
    static RUNS: OnceLock<(Vec<VariantRuns>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t0 = Instant::now();
        let cfg = fixture_config();
        let dataset = build_dataset(&cfg).unwrap();
        let runs = ABLATION_GRID
            .iter()
            .map(|&(label, cast, ic, dt)| {
                let mut variant = cfg.clone();
                variant.trainer.cast_enabled = cast;
                variant.trainer.ic_enabled = ic;
                variant.trainer.dynamic_threshold_enabled = dt;
                let summaries = run_all_seeds(&variant, &dataset)
                    .unwrap()
                    .into_iter()
                    .map(|e| e.summary)
                    .collect();
                VariantRuns { label, summaries }
            })
            .collect();
        (runs, t0.elapsed())
    })
}

fn directional_ablation() -> Check {
    let cfg = fixture_config();
    let d = &cfg.dataset;
    ensure!(
        (
            d.num_classes,
            d.num_domains,
            cfg.scenario.classes_per_task,
            d.per_cell
        ) == (10, 4, 2, 60)
            && d.shift_strength == 0.6
            && cfg.scenario.kind == ScenarioKind::Vil
            && cfg.task_count() == 20
            && cfg.run.seeds.len() == 5,
        "fixture shape drifted"
    );
    let (runs, elapsed) = ablation_runs();
    let stats = |label: &str| {
        let v = runs.iter().find(|r| r.label == label).unwrap();
        (
            mean(v.summaries.iter().map(|s| s.avg_acc)),
            mean(v.summaries.iter().map(|s| s.forgetting)),
        )
    };
    let (base_a, base_f) = stats("baseline");
    let (cast_a, _) = stats("cast_only");
    let (ic_a, _) = stats("ic_only");
    let (full_a, full_f) = stats("full");
    let detail = format!(
        "A: base {base_a:.4} cast {cast_a:.4} ic {ic_a:.4} full {full_a:.4}; F: base {base_f:.4} full {full_f:.4}"
    );
    ensure!(*elapsed < ABLATION_BUDGET, "took {elapsed:?}; {detail}");
    ensure!(
        full_a > base_a && full_a - base_a >= ABLATION_MIN_GAIN,
        "(a) gain too small; {detail}"
    );
    ensure!(full_f < base_f, "(b) forgetting not reduced; {detail}");
    ensure!(
        cast_a >= base_a,
        "(c) shift-loss-only below baseline; {detail}"
    );
    ensure!(
        ic_a >= base_a,
        "(c) classifier-only below baseline; {detail}"
    );
    Ok(detail)
}

fn node_growth() -> Check {
    let cfg = fixture_config();
    let (lo, hi) = (
        cfg.dataset.num_classes,
        cfg.dataset.num_classes * cfg.dataset.num_domains,
    );
    let mut checked = 0;
    for v in &ablation_runs().0 {
        for s in &v.summaries {
            ensure!(
                (lo..=hi).contains(&s.total_nodes),
                "{} seed {}: {} nodes",
                v.label,
                s.seed,
                s.total_nodes
            );
            checked += 1;
        }
    }
    let mut expansions = Vec::new();
    for shift in [0.0, 0.9] {
        let mut c = cfg.clone();
        c.dataset.shift_strength = shift;
        let runs = run_all_seeds(&c, &build_dataset(&c).unwrap()).unwrap();
        for e in &runs {
            ensure!(
                (lo..=hi).contains(&e.summary.total_nodes),
                "shift {shift}: {} nodes",
                e.summary.total_nodes
            );
            checked += 1;
        }
        expansions.push(mean(runs.iter().map(|e| e.summary.expansions as f64)));
    }
    let detail = format!(
        "{checked} runs within [{lo}, {hi}]; mean expansions {:.1} at shift 0, {:.1} at shift 0.9",
        expansions[0], expansions[1]
    );
    ensure!(expansions[0] <= expansions[1], "{detail}");
    Ok(detail)
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config();
    cfg.run.seeds = vec![3];
    cfg.run.out_dir = tmp.path().to_path_buf();
    let files = ["seed_3/acc_matrix.csv", "seed_3/summary.json"];
    let read = || files.map(|f| std::fs::read(tmp.path().join(f)).unwrap());
    cmd_run(&cfg).unwrap();
    let first = read();
    std::fs::remove_dir_all(tmp.path().join("seed_3")).unwrap();
    cmd_run(&cfg).unwrap();
    let second = read();
    for (name, (a, b)) in files.iter().zip(first.iter().zip(&second)) {
        ensure!(a == b, "{name} differs between runs");
    }
    Ok(format!("{} and {} byte-identical", files[0], files[1]))
}

fn gradient_descent_identity() -> Check {
    // f(θ) = ½ θᵀAθ + bᵀθ with A symmetric positive definite.
    let a = [[3.0, 0.5], [0.5, 1.0]];
    let b = [-1.0, 2.0];
    let eta = 0.1;
    let theta0 = vec![0.7, -1.3];
    let mut theta = theta0.clone();
    let mut grad_sum = [0.0; 2];
    for _ in 0..GD_STEPS {
        let g: Vec<f64> = (0..2)
            .map(|i| a[i][0] * theta[0] + a[i][1] * theta[1] + b[i])
            .collect();
        for i in 0..2 {
            grad_sum[i] += g[i];
            theta[i] -= eta * g[i];
        }
    }
    let shift = compute_shift(&theta, &theta0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..2 {
        let err = (shift[i] + eta * grad_sum[i]).abs();
        worst = worst.max(err);
        ensure!(
            err <= GD_TOL,
            "component {i}: {} vs {}",
            shift[i],
            -eta * grad_sum[i]
        );
    }
    ensure!(shift.iter().any(|s| s.abs() > 1e-3), "descent did not move");
    Ok(format!("max error {worst:.1e} after {GD_STEPS} steps"))
}
