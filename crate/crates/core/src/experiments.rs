//! Benchmark presets: the multi-class accuracy table, the task-addition
//! (negative transfer) schedule, the threshold-bias demo, the hypothesis-test
//! ROC, and the relatedness sweep. Every preset is seeded and emits both a
//! result document and plot-ready tables.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classify::{
    predict_accuracy, train_binary, train_one_hot, train_one_vs_all, train_one_vs_one,
    ClassifierKind, McConfig, MulticlassLabels, RocPoint, StatsSource, TrainOptions,
    TrainedClassifier,
};
use crate::error::{Error, Result};
use crate::general::{solve_delta_general, DENSE_LIMIT_DEFAULT};
use crate::io::{write_table, ResultDoc};
use crate::labels::{DecisionRule, LabelMode};
use crate::linalg::q_func;
use crate::model::{Hyperparams, NormMode};
use crate::solver::SolverContext;
use crate::stats::SufficientStats;
use crate::synth::{
    beta_benchmark_spec, draw_test, generate_synthetic, MeanModel, SyntheticSpec,
};

const STREAM_EVAL: u64 = 77;

// ---------------------------------------------------------------------------
// Shared evaluation helpers
// ---------------------------------------------------------------------------

/// Test draws proportional to the training class proportions, `total` in all.
pub fn proportional_test_counts(counts: &[Vec<usize>], total: usize) -> Vec<Vec<usize>> {
    let n: usize = counts.iter().flatten().sum();
    counts
        .iter()
        .map(|t| {
            t.iter()
                .map(|&c| ((c as f64 / n as f64) * total as f64).round() as usize)
                .collect()
        })
        .collect()
}

/// Count-weighted empirical accuracy over all tasks: task-i test points are
/// decided by the task-i machinery.
pub fn weighted_accuracy(
    clf: &TrainedClassifier,
    test: &[Vec<DMatrix<f64>>],
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, task) in test.iter().enumerate() {
        for (j, block) in task.iter().enumerate() {
            if block.ncols() == 0 {
                continue;
            }
            let decided = clf.classify_batch(block, i)?;
            hits += decided.iter().filter(|&&d| d == j).count();
            total += block.ncols();
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Count-weighted theoretical accuracy over all tasks for argmax pipelines.
fn weighted_theoretical(
    clf: &TrainedClassifier,
    mc: &McConfig,
) -> Result<Option<f64>> {
    let gen = match &clf.stats {
        Some(g) => g,
        None => return Ok(None),
    };
    let props = &gen.props;
    let mut acc = 0.0;
    for t in 0..props.k() {
        let report = match clf.kind {
            ClassifierKind::OneHot => predict_accuracy(
                gen,
                &MulticlassLabels::OneHot(&clf.labels_used[t][0].scores),
                t,
                mc,
            )?,
            ClassifierKind::OneVsAll => {
                let scores: Vec<_> = clf.labels_used[t]
                    .iter()
                    .map(|l| l.scores.clone())
                    .collect();
                let m = props.m();
                let scales = match &clf.rules[t] {
                    DecisionRule::ArgmaxScaled { scales } => {
                        DVector::from_fn(m, |c, _| scales[(0, c)])
                    }
                    _ => DVector::from_element(m, 1.0),
                };
                predict_accuracy(
                    gen,
                    &MulticlassLabels::OneVsAll {
                        scores: &scores,
                        scales: &scales,
                    },
                    t,
                    mc,
                )?
            }
            _ => return Ok(None),
        };
        acc += props.c_i(t) * report.mean;
    }
    Ok(Some(acc))
}

// ---------------------------------------------------------------------------
// Multi-class accuracy table preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub beta: f64,
    pub method: String,
    pub labels: String,
    pub empirical: f64,
    pub theoretical: Option<f64>,
}

/// The five-class two-task benchmark: base means 2 e_j, orthogonal
/// complements e_{p-1-j}, c_1j = 0.16, c_2j = 0.04, lambda = 1, gamma = 1.
pub fn table3_spec(beta: f64, seed: u64) -> SyntheticSpec {
    beta_benchmark_spec(
        100,
        vec![vec![160; 5], vec![40; 5]],
        beta,
        2.0,
        1.0,
        seed,
    )
}

pub fn run_table3(
    seed: u64,
    betas: &[f64],
    test_samples: usize,
    mc: &McConfig,
) -> Result<Vec<TableRow>> {
    let hyper = Hyperparams::uniform(2, 1.0, 1.0)?;
    let mut rows = Vec::new();
    for (bi, &beta) in betas.iter().enumerate() {
        let spec = table3_spec(beta, seed.wrapping_add(bi as u64));
        let (train, _, truth) = generate_synthetic(&spec)?;
        let test_counts = proportional_test_counts(&spec.counts, test_samples);
        let test: Vec<Vec<DMatrix<f64>>> = (0..2)
            .map(|i| {
                (0..5)
                    .map(|j| {
                        draw_test(
                            &spec,
                            STREAM_EVAL + (i * 5 + j) as u64,
                            i,
                            j,
                            test_counts[i][j],
                        )
                    })
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        for labels in [LabelMode::Classical, LabelMode::Optimized] {
            let opts = TrainOptions::new(labels, StatsSource::Known(truth.clone()));
            let lname = match labels {
                LabelMode::Classical => "classical",
                LabelMode::Optimized => "optimized",
            };
            for (method, clf) in [
                ("one_vs_all", train_one_vs_all(&train, &hyper, &opts)?),
                ("one_vs_one", train_one_vs_one(&train, &hyper, &opts)?),
                ("one_hot", train_one_hot(&train, &hyper, &opts)?),
            ] {
                let empirical = weighted_accuracy(&clf, &test)?;
                let theoretical = weighted_theoretical(&clf, mc)?;
                rows.push(TableRow {
                    beta,
                    method: method.to_string(),
                    labels: lname.to_string(),
                    empirical: 100.0 * empirical,
                    theoretical: theoretical.map(|v| 100.0 * v),
                });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Task-addition schedule (negative transfer) preset
// ---------------------------------------------------------------------------

/// Mean norm of the task-addition schedule.
pub const FIG4_MEAN_SCALE: f64 = 0.8;
/// Source-task correlations, in addition order.
pub const FIG4_BETAS: [f64; 5] = [1.0, 0.9, 0.5, 0.2, 0.8];
/// Per-task class counts (target first).
pub const FIG4_COUNTS: [[usize; 2]; 6] = [
    [70, 110],
    [100, 100],
    [60, 80],
    [90, 120],
    [100, 110],
    [30, 30],
];

fn fig4_spec(tasks: usize, seed: u64) -> SyntheticSpec {
    let p = 100;
    let a = FIG4_MEAN_SCALE;
    let mut base = vec![vec![0.0; p]; 2];
    base[0][0] = a;
    base[1][0] = -a;
    let mut betas = Vec::new();
    let mut complements = Vec::new();
    for t in 0..tasks - 1 {
        betas.push(FIG4_BETAS[t]);
        // one shared complement direction: the spurious components of the
        // weakly related tasks accumulate instead of spreading out
        let mut c1 = vec![0.0; p];
        c1[10] = a;
        let mut c2 = vec![0.0; p];
        c2[10] = -a;
        complements.push(vec![c1, c2]);
    }
    SyntheticSpec {
        p,
        counts: FIG4_COUNTS[..tasks].iter().map(|c| c.to_vec()).collect(),
        mean_model: MeanModel::BetaCorrelated {
            base,
            betas,
            complements,
        },
        cov_model: crate::synth::SynthCov::Identity,
        seed,
        test_per_class: 0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageResult {
    pub tasks: usize,
    pub classical_error: f64,
    pub optimized_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig4Result {
    pub single_task_error: f64,
    pub stages: Vec<StageResult>,
}

/// Target-task error as source tasks are added one by one. The same test
/// draws are reused at every stage so stage differences carry no test noise,
/// and results are averaged over training seeds.
pub fn run_fig4(seed: u64, seeds: usize, test_per_class: usize) -> Result<Fig4Result> {
    let p = 100;
    let full = fig4_spec(6, seed);
    let test: Vec<DMatrix<f64>> = (0..2)
        .map(|j| draw_test(&full, STREAM_EVAL + j as u64, 0, j, test_per_class))
        .collect::<Result<_>>()?;
    // classical machines decide at threshold zero (the uncalibrated
    // baseline); optimized machines use their estimated threshold
    let eval = |clf: &TrainedClassifier, zeta_override: Option<f64>| -> Result<f64> {
        let z = zeta_override.unwrap_or(match &clf.rules[0] {
            DecisionRule::Threshold { zeta, .. } => zeta[0],
            _ => 0.0,
        });
        let mut err = 0usize;
        for (j, block) in test.iter().enumerate() {
            let g = clf.score_raw(block, 0)?;
            for c in 0..block.ncols() {
                if usize::from(g[(0, c)] <= z) != j {
                    err += 1;
                }
            }
        }
        Ok(err as f64 / (2 * test_per_class) as f64)
    };
    let _ = p;
    let mut single = 0.0;
    let mut stage_acc = vec![(0.0f64, 0.0f64); 5];
    for s in 0..seeds {
        let sseed = seed.wrapping_add(1000 * s as u64);
        // single-task baseline
        {
            let spec = fig4_spec(1, sseed);
            let (train, _, truth) = generate_synthetic(&spec)?;
            let hp = Hyperparams::uniform(1, 10.0, 1.0)?;
            let opts = TrainOptions::new(LabelMode::Classical, StatsSource::Known(truth));
            let clf = train_binary(&train, &hp, &opts)?;
            single += eval(&clf, Some(0.0))?;
        }
        for stage in 0..5 {
            let tasks = stage + 2;
            let spec = fig4_spec(tasks, sseed);
            let (train, _, truth) = generate_synthetic(&spec)?;
            let hp = Hyperparams::uniform(tasks, 10.0, 1.0)?;
            for (slot, labels) in [LabelMode::Classical, LabelMode::Optimized]
                .into_iter()
                .enumerate()
            {
                let opts = TrainOptions::new(labels, StatsSource::Known(truth.clone()));
                let clf = train_binary(&train, &hp, &opts)?;
                if slot == 0 {
                    stage_acc[stage].0 += eval(&clf, Some(0.0))?;
                } else {
                    stage_acc[stage].1 += eval(&clf, None)?;
                }
            }
        }
    }
    let n = seeds as f64;
    Ok(Fig4Result {
        single_task_error: single / n,
        stages: (0..5)
            .map(|s| StageResult {
                tasks: s + 2,
                classical_error: stage_acc[s].0 / n,
                optimized_error: stage_acc[s].1 / n,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Threshold-bias demo preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Fig2Row {
    pub beta: f64,
    pub mean_c1: f64,
    pub mean_c2: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub classical_error_at_zeta: f64,
    pub classical_error_at_zero: f64,
    pub optimized_error: f64,
}

/// Unbalanced binary benchmark: c = (0.3, 0.4, 0.1, 0.2), strong coupling.
pub fn fig2_spec(beta: f64, n: usize, seed: u64) -> SyntheticSpec {
    let counts = vec![
        vec![(n as f64 * 0.3) as usize, (n as f64 * 0.4) as usize],
        vec![(n as f64 * 0.1) as usize, (n as f64 * 0.2) as usize],
    ];
    // class 1 at -mu, class 2 at +mu
    let p = 100;
    let mut b1 = vec![0.0; p];
    b1[0] = -1.0;
    let mut b2 = vec![0.0; p];
    b2[0] = 1.0;
    let mut c1 = vec![0.0; p];
    c1[1] = -1.0;
    let mut c2 = vec![0.0; p];
    c2[1] = 1.0;
    SyntheticSpec {
        p,
        counts,
        mean_model: MeanModel::BetaCorrelated {
            base: vec![b1, b2],
            betas: vec![beta],
            complements: vec![vec![c1, c2]],
        },
        cov_model: crate::synth::SynthCov::Identity,
        seed,
        test_per_class: 0,
    }
}

pub fn run_fig2(seed: u64, betas: &[f64], test_per_class: usize) -> Result<Vec<Fig2Row>> {
    let hyper = Hyperparams::uniform(2, 10.0, 1.0)?;
    let mut rows = Vec::new();
    for (bi, &beta) in betas.iter().enumerate() {
        let spec = fig2_spec(beta, 1000, seed.wrapping_add(bi as u64));
        let (train, _, truth) = generate_synthetic(&spec)?;
        let test: Vec<DMatrix<f64>> = (0..2)
            .map(|j| draw_test(&spec, STREAM_EVAL + j as u64, 1, j, test_per_class))
            .collect::<Result<_>>()?;
        let eval = |clf: &TrainedClassifier, zeta_override: Option<f64>| -> Result<f64> {
            let base_zeta = match &clf.rules[1] {
                DecisionRule::Threshold { zeta, .. } => zeta[1],
                _ => 0.0,
            };
            let z = zeta_override.unwrap_or(base_zeta);
            let mut err = 0usize;
            for (j, block) in test.iter().enumerate() {
                // decide class 1 when g > z
                let g = clf.score_raw(block, 1)?;
                for c in 0..block.ncols() {
                    let decided = usize::from(g[(0, c)] <= z);
                    if decided != j {
                        err += 1;
                    }
                }
            }
            Ok(err as f64 / (2 * test_per_class) as f64)
        };
        let opts_c = TrainOptions::new(LabelMode::Classical, StatsSource::Known(truth.clone()));
        let clf_c = train_binary(&train, &hyper, &opts_c)?;
        let opts_o = TrainOptions::new(LabelMode::Optimized, StatsSource::Known(truth.clone()));
        let clf_o = train_binary(&train, &hyper, &opts_o)?;
        let pred = clf_c.predictions[1].as_ref().unwrap();
        let zeta = match &clf_c.rules[1] {
            DecisionRule::Threshold { zeta, .. } => zeta[1],
            _ => 0.0,
        };
        rows.push(Fig2Row {
            beta,
            mean_c1: pred.mean(1, 0, 0),
            mean_c2: pred.mean(1, 1, 0),
            sigma: pred.sigma(1, 0),
            zeta,
            classical_error_at_zeta: eval(&clf_c, None)?,
            classical_error_at_zero: eval(&clf_c, Some(0.0))?,
            optimized_error: eval(&clf_o, None)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// ROC preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RocRow {
    pub eta: f64,
    pub threshold: f64,
    pub theoretical: f64,
    pub empirical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub empirical_false_alarm: f64,
}

/// The hypothesis-testing benchmark: p = 128, counts (384, 256, 64, 40),
/// unit-norm target means, target task 2.
pub fn roc_spec(seed: u64) -> SyntheticSpec {
    let p = 128;
    let mut m11 = vec![0.0; p];
    m11[0] = 1.0;
    let m12: Vec<f64> = m11.iter().map(|v| -v).collect();
    let mut m21 = vec![0.0; p];
    m21[0] = 0.87;
    m21[1] = 0.5;
    let m22: Vec<f64> = m21.iter().map(|v| -v).collect();
    SyntheticSpec {
        p,
        counts: vec![vec![384, 256], vec![64, 40]],
        mean_model: MeanModel::Explicit {
            means: vec![vec![m11, m12], vec![m21, m22]],
        },
        cov_model: crate::synth::SynthCov::Identity,
        seed,
        test_per_class: 0,
    }
}

/// ROC rows averaged over several training draws: per-draw score statistics
/// fluctuate at finite p (the scarce task has ~100 samples), and the
/// theoretical law predicts their average.
pub fn run_roc_averaged(
    seeds: &[u64],
    etas: &[f64],
    draws_per_class: usize,
    labels: LabelMode,
) -> Result<Vec<RocRow>> {
    let mut acc: Option<Vec<RocRow>> = None;
    for &s in seeds {
        let rows = run_roc(s, etas, draws_per_class, labels)?;
        acc = Some(match acc {
            None => rows,
            Some(mut a) => {
                for (ar, r) in a.iter_mut().zip(rows) {
                    ar.threshold += r.threshold;
                    ar.theoretical += r.theoretical;
                    ar.empirical += r.empirical;
                    ar.ci_low += r.ci_low;
                    ar.ci_high += r.ci_high;
                    ar.empirical_false_alarm += r.empirical_false_alarm;
                }
                a
            }
        });
    }
    let mut rows = acc.expect("at least one seed");
    let n = seeds.len() as f64;
    for r in &mut rows {
        r.threshold /= n;
        r.theoretical /= n;
        r.empirical /= n;
        r.ci_low /= n;
        r.ci_high /= n;
        r.empirical_false_alarm /= n;
    }
    Ok(rows)
}

pub fn run_roc(
    seed: u64,
    etas: &[f64],
    draws_per_class: usize,
    labels: LabelMode,
) -> Result<Vec<RocRow>> {
    let spec = roc_spec(seed);
    let (train, _, truth) = generate_synthetic(&spec)?;
    let hyper = Hyperparams::uniform(2, 1.0, 1.0)?;
    let prep = crate::model::preprocess(&train, NormMode::None)?;
    let gen = solve_delta_general(&truth, &hyper, DENSE_LIMIT_DEFAULT)?;
    let ctx = SolverContext::new(&prep, &hyper)?;
    let task = 1;
    let points: Vec<RocPoint> = crate::classify::roc_curve(&gen, task, etas, labels)?;
    let duals: Vec<crate::solver::DualSolution> = points
        .iter()
        .map(|pt| ctx.resolve(&pt.labels))
        .collect::<Result<_>>()?;
    // Stream test draws in chunks and reuse each chunk's data projections
    // across the whole threshold grid.
    let mut hits = vec![[0usize; 2]; points.len()];
    const CHUNK: usize = 20_000;
    for class in 0..2 {
        let x = draw_test(&spec, STREAM_EVAL + class as u64, task, class, draws_per_class)?;
        let mut done = 0;
        while done < draws_per_class {
            let c = CHUNK.min(draws_per_class - done);
            let block = x.columns(done, c).into_owned();
            let proj = ctx.project_batch(&block, task)?;
            for (pi, d) in duals.iter().enumerate() {
                let g = ctx.score_projected(d, &proj, task);
                hits[pi][class] += g
                    .row(0)
                    .iter()
                    .filter(|&&v| v > points[pi].threshold)
                    .count();
            }
            done += c;
        }
    }
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(pi, pt)| {
            let emp = hits[pi][1] as f64 / draws_per_class as f64;
            let (lo, hi) = crate::classify::wilson_interval(hits[pi][1], draws_per_class, 1.96);
            RocRow {
                eta: pt.eta,
                threshold: pt.threshold,
                theoretical: pt.theoretical_detection,
                empirical: emp,
                ci_low: lo,
                ci_high: hi,
                empirical_false_alarm: hits[pi][0] as f64 / draws_per_class as f64,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Relatedness sweep preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub predicted_classical: f64,
    pub predicted_optimized: f64,
}

pub fn run_sweep(beta: f64, lambdas: &[f64], stats: &SufficientStats, task: usize) -> Result<Vec<SweepRow>> {
    let _ = beta;
    let k = stats.props.k();
    lambdas
        .iter()
        .map(|&l| {
            let hp = Hyperparams::uniform(k, l, 1.0)?;
            Ok(SweepRow {
                lambda: l,
                predicted_classical: crate::labels::predicted_error_for(
                    stats,
                    &hp,
                    task,
                    LabelMode::Classical,
                )?,
                predicted_optimized: crate::labels::predicted_error_for(
                    stats,
                    &hp,
                    task,
                    LabelMode::Optimized,
                )?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default)]
    pub test_samples: Option<usize>,
    #[serde(default)]
    pub labels: Option<String>,
}

/// Run a named preset, writing a result document plus one CSV table per
/// figure analog. Returns the path of the result document.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let echo = serde_json::to_value(cfg).expect("serializable");
    let mut doc = ResultDoc::new(&cfg.preset, cfg.seed, echo);
    let out = |name: &str| cfg.out_dir.join(name);
    match cfg.preset.as_str() {
        "table3" => {
            let betas = cfg.betas.clone().unwrap_or_else(|| vec![0.1, 0.5, 0.8]);
            let rows = run_table3(
                cfg.seed,
                &betas,
                cfg.test_samples.unwrap_or(10_000),
                &McConfig::default(),
            )?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.beta,
                        method_code(&r.method),
                        label_code(&r.labels),
                        r.empirical,
                        r.theoretical.unwrap_or(f64::NAN),
                    ]
                })
                .collect();
            write_table(
                &out("table3.csv"),
                &["beta", "method", "labels", "empirical", "theoretical"],
                &table,
            )?;
            doc.insert("rows", &rows);
            doc.tables.push("table3.csv".into());
        }
        "fig2" => {
            let betas = cfg.betas.clone().unwrap_or_else(|| vec![-1.0, 0.0, 0.5, 1.0]);
            let rows = run_fig2(cfg.seed, &betas, cfg.test_samples.unwrap_or(1000))?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.beta,
                        r.mean_c1,
                        r.mean_c2,
                        r.sigma,
                        r.zeta,
                        r.classical_error_at_zeta,
                        r.classical_error_at_zero,
                        r.optimized_error,
                    ]
                })
                .collect();
            write_table(
                &out("fig2.csv"),
                &[
                    "beta",
                    "mean_c1",
                    "mean_c2",
                    "sigma",
                    "zeta",
                    "classical_err_zeta",
                    "classical_err_zero",
                    "optimized_err",
                ],
                &table,
            )?;
            doc.insert("rows", &rows);
            doc.tables.push("fig2.csv".into());
        }
        "fig4" => {
            let res = run_fig4(cfg.seed, 4, cfg.test_samples.unwrap_or(10_000) / 2)?;
            let mut table = vec![vec![
                1.0,
                res.single_task_error,
                res.single_task_error,
            ]];
            for s in &res.stages {
                table.push(vec![s.tasks as f64, s.classical_error, s.optimized_error]);
            }
            write_table(
                &out("fig4.csv"),
                &["tasks", "classical_error", "optimized_error"],
                &table,
            )?;
            doc.insert("result", &res);
            doc.tables.push("fig4.csv".into());
        }
        "roc" => {
            let etas = default_eta_grid();
            let labels = match cfg.labels.as_deref() {
                Some("classical") => LabelMode::Classical,
                _ => LabelMode::Optimized,
            };
            let rows = run_roc(
                cfg.seed,
                &etas,
                cfg.test_samples.unwrap_or(100_000),
                labels,
            )?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.eta,
                        r.threshold,
                        r.theoretical,
                        r.empirical,
                        r.ci_low,
                        r.ci_high,
                        r.empirical_false_alarm,
                    ]
                })
                .collect();
            write_table(
                &out("roc.csv"),
                &[
                    "eta",
                    "threshold",
                    "theoretical",
                    "empirical",
                    "ci_low",
                    "ci_high",
                    "empirical_false_alarm",
                ],
                &table,
            )?;
            doc.insert("rows", &rows);
            doc.tables.push("roc.csv".into());
        }
        "sweep" => {
            let spec = fig2_spec(0.5, 1000, cfg.seed);
            let (_, _, truth) = generate_synthetic(&spec)?;
            let lambdas: Vec<f64> = (0..13)
                .map(|i| 10f64.powf(-3.0 + 0.5 * i as f64))
                .collect();
            let rows = run_sweep(0.5, &lambdas, &truth, 1)?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.lambda, r.predicted_classical, r.predicted_optimized])
                .collect();
            write_table(
                &out("sweep.csv"),
                &["lambda", "predicted_classical", "predicted_optimized"],
                &table,
            )?;
            doc.insert("rows", &rows);
            doc.tables.push("sweep.csv".into());
        }
        other => {
            return Err(Error::BadSpec(format!("unknown preset `{other}`")));
        }
    }
    let path = out("result.json");
    doc.write(&path)?;
    Ok(path)
}

fn method_code(m: &str) -> f64 {
    match m {
        "one_vs_all" => 1.0,
        "one_vs_one" => 2.0,
        _ => 3.0,
    }
}

fn label_code(l: &str) -> f64 {
    if l == "classical" {
        1.0
    } else {
        2.0
    }
}

pub fn default_eta_grid() -> Vec<f64> {
    (0..12)
        .map(|i| 10f64.powf(-3.0 + i as f64 * (0.3f64.log10() + 3.0) / 11.0))
        .collect()
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov helper used by validation suites
// ---------------------------------------------------------------------------

/// One-sample KS statistic against the standard normal.
pub fn ks_statistic_normal(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut d: f64 = 0.0;
    for (idx, &v) in values.iter().enumerate() {
        let cdf = crate::linalg::norm_cdf(v);
        let lo = idx as f64 / n;
        let hi = (idx + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}

/// KS critical value at significance `alpha` (Stephens' approximation).
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    let sn = (n as f64).sqrt();
    c / (sn + 0.12 + 0.11 / sn)
}

/// Predicted binary error from a prediction (midpoint threshold).
pub fn predicted_midpoint_error(pred: &crate::prediction::ScorePrediction, task: usize) -> f64 {
    q_func((pred.mean(task, 0, 0) - pred.mean(task, 1, 0)) / (2.0 * pred.sigma(task, 0)))
}
