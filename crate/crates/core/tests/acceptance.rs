//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N: PASS/FAIL` line with the measured quantities. Tolerances are
//! pinned here, not configurable.
//!
//! Criteria 1 and 2 compare against published benchmark numbers; the pinned
//! comparison tables below document the targets. See the project notes for
//! the analysis of the entries that are not reproducible from their stated
//! configurations (Bayes-bound violations and an exact argmax-equivalence
//! argument); those assertions are kept faithful and fail honestly.

use mtl_lssvm::classify::McConfig;
use mtl_lssvm::experiments::{
    ks_critical, ks_statistic_normal, run_fig4, run_roc_averaged, run_table3, TableRow,
};
use mtl_lssvm::general::{predict_general, solve_delta_general, DENSE_LIMIT_DEFAULT};
use mtl_lssvm::isotropic::{
    build_isotropic_stats, delta_closed_form_k1, delta_residual, predict_binary_isotropic,
    solve_delta_isotropic,
};
use mtl_lssvm::labels::{optimal_labels_isotropic, LabelMode};
use mtl_lssvm::linalg::q_func;
use mtl_lssvm::model::{preprocess, ClassProportions, Hyperparams, NormMode, ScoreAssignment};
use mtl_lssvm::solver::{primal_oracle, SolverContext};
use mtl_lssvm::stats::{CovModel, SufficientStats};
use mtl_lssvm::synth::{beta_benchmark_spec, draw_test, generate_synthetic};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Criterion 1: benchmark table reproduction
// ---------------------------------------------------------------------------

/// Published accuracy table: (beta, method, labels, empirical, theoretical).
const TABLE3_TARGETS: &[(f64, &str, &str, f64, Option<f64>)] = &[
    (0.1, "one_vs_all", "classical", 61.43, Some(59.87)),
    (0.1, "one_vs_one", "classical", 65.31, None),
    (0.1, "one_hot", "classical", 65.61, Some(64.35)),
    (0.1, "one_vs_all", "optimized", 67.63, Some(67.57)),
    (0.1, "one_vs_one", "optimized", 74.98, None),
    (0.1, "one_hot", "optimized", 67.63, Some(67.55)),
    (0.5, "one_vs_all", "classical", 65.47, Some(66.00)),
    (0.5, "one_vs_one", "classical", 71.30, None),
    (0.5, "one_hot", "classical", 67.41, Some(67.90)),
    (0.5, "one_vs_all", "optimized", 68.00, Some(68.52)),
    (0.5, "one_vs_one", "optimized", 76.31, None),
    (0.5, "one_hot", "optimized", 68.03, Some(68.48)),
    (0.8, "one_vs_all", "classical", 71.16, Some(70.63)),
    (0.8, "one_vs_one", "classical", 78.20, None),
    (0.8, "one_hot", "classical", 70.97, Some(70.58)),
    (0.8, "one_vs_all", "optimized", 71.19, Some(70.76)),
    (0.8, "one_vs_one", "optimized", 78.55, None),
    (0.8, "one_hot", "optimized", 71.14, Some(70.67)),
];

fn find_row<'a>(rows: &'a [TableRow], beta: f64, method: &str, labels: &str) -> &'a TableRow {
    rows.iter()
        .find(|r| (r.beta - beta).abs() < 1e-9 && r.method == method && r.labels == labels)
        .expect("row present")
}

#[test]
fn criterion_1_table3_reproduction() {
    let mc = McConfig {
        samples: 400_000,
        seed: 9,
    };
    let rows = run_table3(42, &[0.1, 0.5, 0.8], 10_000, &mc).unwrap();
    let mut failures = Vec::new();
    println!("criterion 1 comparison (tolerance: empirical ±1.5, theoretical ±1.0):");
    println!("  beta method      labels     ours-emp  ref-emp  d-emp | ours-th  ref-th  d-th");
    for &(beta, method, labels, ref_emp, ref_th) in TABLE3_TARGETS {
        let r = find_row(&rows, beta, method, labels);
        let d_emp = r.empirical - ref_emp;
        let emp_ok = d_emp.abs() <= 1.5;
        let (ours_th, d_th, th_ok) = match (r.theoretical, ref_th) {
            (Some(o), Some(t)) => (format!("{o:6.2}"), format!("{:+5.2}", o - t), (o - t).abs() <= 1.0),
            _ => ("   -- ".into(), "  -- ".into(), true),
        };
        println!(
            "  {beta:.1}  {method:<11} {labels:<10} {:8.2} {ref_emp:8.2} {d_emp:+6.2} | {ours_th} {} {}  {}",
            r.empirical,
            ref_th.map(|v| format!("{v:6.2}")).unwrap_or("   -- ".into()),
            d_th,
            if emp_ok && th_ok { "ok" } else { "MISS" }
        );
        if !emp_ok {
            failures.push(format!("{beta:.1}/{method}/{labels} empirical off by {d_emp:+.2}"));
        }
        if !th_ok {
            failures.push(format!("{beta:.1}/{method}/{labels} theoretical off"));
        }
    }
    if failures.is_empty() {
        println!("criterion 1: PASS — all 18 entries within tolerance");
    } else {
        println!(
            "criterion 1: FAIL — {}/{} comparisons outside tolerance (see notes: several published entries exceed the Bayes bound of the stated configuration or contradict an exact argmax equivalence)",
            failures.len(),
            TABLE3_TARGETS.len()
        );
    }
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 2: negative-transfer monotonicity
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_negative_transfer_schedule() {
    let res = run_fig4(7, 4, 5_000).unwrap();
    let mut chain = vec![res.single_task_error];
    chain.extend(res.stages.iter().map(|s| s.optimized_error));
    println!(
        "criterion 2 optimized errors: single {:.4}, additions {:?}",
        res.single_task_error,
        res.stages.iter().map(|s| s.optimized_error).collect::<Vec<_>>()
    );
    println!(
        "criterion 2 classical errors: single {:.4}, additions {:?}",
        res.single_task_error,
        res.stages.iter().map(|s| s.classical_error).collect::<Vec<_>>()
    );
    let mut monotone = true;
    for w in chain.windows(2) {
        if w[1] > w[0] + 0.005 {
            monotone = false;
        }
    }
    // additions 3 and 4 carry the beta = .5 and beta = .2 sources
    let jump_05 = res.stages[2].classical_error - res.stages[1].classical_error;
    let jump_02 = res.stages[3].classical_error - res.stages[2].classical_error;
    let classical_jump = jump_05.max(jump_02);
    println!(
        "criterion 2: optimized monotone within +0.5pt: {}; classical increase at the weak additions: {:+.2} points (required >= 5)",
        monotone,
        100.0 * classical_jump
    );
    if monotone && classical_jump >= 0.05 {
        println!("criterion 2: PASS");
    } else if monotone {
        println!(
            "criterion 2: FAIL — optimized monotonicity holds, but the stated configuration cannot produce a >= 5 point classical jump (measured {:+.2}; see notes)",
            100.0 * classical_jump
        );
    } else {
        println!("criterion 2: FAIL — optimized error increased at a task addition");
    }
    assert!(monotone, "optimized error increased at a task addition");
    assert!(
        classical_jump >= 0.05,
        "classical increase {:+.2} points < 5",
        100.0 * classical_jump
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: ROC fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_roc_fidelity() {
    let etas = mtl_lssvm::experiments::default_eta_grid();
    // averaged over training draws: the law predicts the score statistics of
    // a random training set, and single-draw fluctuations at p = 128 with a
    // ~100-sample target task are the dominant noise term
    let rows = run_roc_averaged(&[5, 15, 25, 35, 45], &etas, 100_000, LabelMode::Optimized).unwrap();
    let mut worst: f64 = 0.0;
    for r in &rows {
        let gap = (r.empirical - r.theoretical).abs();
        worst = worst.max(gap);
        println!(
            "  eta {:8.5}: theory {:.4} empirical {:.4} gap {:.4} false-alarm {:.4}",
            r.eta, r.theoretical, r.empirical, gap, r.empirical_false_alarm
        );
    }
    let pass = worst <= 0.02;
    println!(
        "criterion 3: {} — max |empirical - theoretical| detection gap {:.4} over eta in [1e-3, 0.3] at 1e5 draws",
        if pass { "PASS" } else { "FAIL" },
        worst
    );
    assert!(pass, "max detection gap {worst:.4} > 0.02");
}

// ---------------------------------------------------------------------------
// Criterion 4: oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_oracle_equivalence() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut worst_w: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for inst in 0..20 {
        let k = 2 + (inst % 2);
        let p = 4 + (inst % 5);
        assert!(k * p <= 60);
        let counts: Vec<Vec<usize>> = (0..k)
            .map(|_| vec![2 + rng.random_range(0..3usize), 2 + rng.random_range(0..3usize)])
            .collect();
        let blocks: Vec<Vec<DMatrix<f64>>> = counts
            .iter()
            .map(|t| {
                t.iter()
                    .map(|&n| {
                        DMatrix::from_fn(p, n, |_, _| {
                            rng.sample::<f64, _>(rand_distr::StandardNormal)
                        })
                    })
                    .collect()
            })
            .collect();
        let data = mtl_lssvm::MtlDataset::new(blocks).unwrap();
        let prep = preprocess(&data, NormMode::None).unwrap();
        let lambda = 0.2 + rng.random_range(0.0..2.0);
        let gamma: Vec<f64> = (0..k).map(|_| 0.5 + rng.random_range(0.0..1.5)).collect();
        let hyper = Hyperparams::new(lambda, gamma).unwrap();
        let y = ScoreAssignment::classical_binary(k);
        let ctx = SolverContext::new(&prep, &hyper).unwrap();
        let dual = ctx.resolve(&y).unwrap();
        let primal = primal_oracle(&prep, &hyper, &y, 20_000).unwrap();
        let op = mtl_lssvm::assemble_block_diagonal(&prep.data, &hyper);
        let az = op.dense_a() * op.dense_z() * &dual.alpha;
        for i in 0..k {
            let wd = az.view((i * p, 0), (p, 1)).into_owned();
            let wp = &primal.w0 + &primal.v[i];
            worst_w = worst_w.max((&wd - wp).abs().max());
        }
        worst_w = worst_w.max((&dual.b - &primal.b).abs().max());
        // shift invariance of the multipliers
        let mut shifted = y.matrix();
        for i in 0..k {
            let c = rng.random_range(-3.0..3.0);
            shifted[(2 * i, 0)] += c;
            shifted[(2 * i + 1, 0)] += c;
        }
        let dual2 = ctx
            .resolve(&ScoreAssignment::Binary(shifted.column(0).into_owned()))
            .unwrap();
        let scale = dual.alpha.abs().max().max(1.0);
        worst_shift = worst_shift.max((&dual.alpha - &dual2.alpha).abs().max() / scale);
    }
    let pass = worst_w < 1e-7 && worst_shift < 1e-10;
    println!(
        "criterion 4: {} — max dual/primal deviation {worst_w:.2e} (tol 1e-7), max multiplier shift deviation {worst_shift:.2e} (tol 1e-10) over 20 instances",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 5: asymptotic-law validation
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_asymptotic_law() {
    let p = 256;
    let counts = vec![vec![512, 512], vec![512, 512]];
    let hyper = Hyperparams::uniform(2, 1.0, 1.0).unwrap();
    let spec0 = beta_benchmark_spec(p, counts.clone(), 0.5, 1.0, 1.0, 100);
    let (_, _, truth) = generate_synthetic(&spec0).unwrap();
    let gen = solve_delta_general(&truth, &hyper, DENSE_LIMIT_DEFAULT).unwrap();
    let iso = build_isotropic_stats(&truth, &hyper).unwrap();
    let y = ScoreAssignment::classical_binary(2);
    let pred = predict_general(&gen, &y).unwrap();

    // (a) identity-covariance general path vs isotropic path
    let gamma_gap = (&gen.gamma_mat - &iso.gamma_mat).abs().max();
    let pred_iso = predict_binary_isotropic(&iso, &y).unwrap();
    let mean_gap = (&pred.means - &pred_iso.means).abs().max();
    let var_gap = (0..4)
        .map(|a| (pred.covs[a][(0, 0)] - pred_iso.covs[a][(0, 0)]).abs())
        .fold(0.0f64, f64::max);
    let paths_ok = gamma_gap < 1e-8 && mean_gap < 1e-8 && var_gap < 1e-8;
    println!(
        "  path equivalence: core-matrix gap {gamma_gap:.2e}, mean gap {mean_gap:.2e}, variance gap {var_gap:.2e}"
    );

    // (b) KS normality over 100 seeds
    let passes: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut spec = spec0.clone();
            spec.seed = 200 + seed;
            let (train, _, _) = generate_synthetic(&spec).unwrap();
            let prep = preprocess(&train, NormMode::None).unwrap();
            let ctx = SolverContext::new(&prep, &hyper).unwrap();
            let sol = ctx.resolve(&y).unwrap();
            let mut resid = Vec::with_capacity(1000);
            for i in 0..2 {
                for j in 0..2 {
                    let x = draw_test(&spec, 700 + (2 * i + j) as u64, i, j, 250).unwrap();
                    let g = ctx.score_batch(&sol, &x, i).unwrap();
                    let m = pred.mean(i, j, 0);
                    let s = pred.sigma(i, j);
                    for v in g.row(0).iter() {
                        resid.push((v - m) / s);
                    }
                }
            }
            let d = ks_statistic_normal(&mut resid);
            usize::from(d < ks_critical(resid.len(), 0.01))
        })
        .sum();
    println!("  KS pass rate: {passes}/100 at level 0.01 (required >= 95)");

    // (c) empirical moments, 10k test draws per class и per training draw;
    // the standard error must carry the training-draw randomness too, so the
    // estimate averages independent runs and takes the SE across them
    let n_draw = 10_000;
    let reps: Vec<u64> = (0..12).collect();
    let moments: Vec<Vec<[f64; 2]>> = reps
        .par_iter()
        .map(|&rep| {
            let mut spec = spec0.clone();
            spec.seed = 987 + rep;
            let (train, _, _) = generate_synthetic(&spec).unwrap();
            let prep = preprocess(&train, NormMode::None).unwrap();
            let ctx = SolverContext::new(&prep, &hyper).unwrap();
            let sol = ctx.resolve(&y).unwrap();
            (0..4)
                .map(|a| {
                    let (i, j) = (a / 2, a % 2);
                    let x = draw_test(&spec, 800 + a as u64, i, j, n_draw).unwrap();
                    let g = ctx.score_batch(&sol, &x, i).unwrap();
                    let mean = g.row(0).sum() / n_draw as f64;
                    let var = g
                        .row(0)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                        / (n_draw - 1) as f64;
                    [mean, var]
                })
                .collect()
        })
        .collect();
    let mut moments_ok = true;
    let r = reps.len() as f64;
    for a in 0..4 {
        let (i, j) = (a / 2, a % 2);
        for slot in 0..2 {
            let vals: Vec<f64> = moments.iter().map(|m| m[a][slot]).collect();
            let avg = vals.iter().sum::<f64>() / r;
            let sd = (vals.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / (r - 1.0)).sqrt();
            let se = sd / r.sqrt();
            let th = if slot == 0 {
                pred.mean(i, j, 0)
            } else {
                pred.variance(i, j)
            };
            if (avg - th).abs() >= 3.0 * se.max(1e-4) {
                moments_ok = false;
                println!(
                    "  moment miss ({i},{j},{}): avg {avg:.4} vs theory {th:.4} (3 SE = {:.4})",
                    if slot == 0 { "mean" } else { "var" },
                    3.0 * se
                );
            }
        }
    }
    let pass = paths_ok && passes >= 95 && moments_ok;
    println!(
        "criterion 5: {} — KS {passes}/100, moments within 3 SE: {moments_ok}, paths agree to 1e-8: {paths_ok}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 6: optimality dominance
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_optimality_dominance() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let mut theory_ok = true;
    let mut emp_gaps = Vec::new();
    let mut per_config_ok = 0usize;
    for cfg_idx in 0..50u64 {
        let p = 60 + rng.random_range(0..60usize);
        let counts = vec![
            vec![40 + rng.random_range(0..60usize), 40 + rng.random_range(0..60usize)],
            vec![30 + rng.random_range(0..50usize), 30 + rng.random_range(0..50usize)],
        ];
        let beta = -1.0 + rng.random_range(0.0..2.0);
        let a = 0.8 + rng.random_range(0.0..1.2);
        let lambda = 10f64.powf(rng.random_range(-1.0..1.0));
        let spec = beta_benchmark_spec(p, counts.clone(), beta, a, a, 300 + cfg_idx);
        let (train, _, truth) = generate_synthetic(&spec).unwrap();
        let hyper = Hyperparams::uniform(2, lambda, 1.0).unwrap();
        let iso = build_isotropic_stats(&truth, &hyper).unwrap();
        let task = (cfg_idx % 2) as usize;
        // theoretical dominance, exact values
        let opt = optimal_labels_isotropic(&iso, task).unwrap();
        let ycl = ScoreAssignment::classical_binary(2);
        let (mc, vc) = iso.law(&ycl).unwrap();
        let err_cl_th = q_func(
            (mc[2 * task] - mc[2 * task + 1]) / (2.0 * vc[task].sqrt()),
        );
        if opt.objective > err_cl_th + 1e-12 {
            theory_ok = false;
            println!(
                "  theory violation at config {cfg_idx}: optimized {:.6} > classical {:.6}",
                opt.objective, err_cl_th
            );
        }
        // empirical confirmation at 10k draws
        let prep = preprocess(&train, NormMode::None).unwrap();
        let ctx = SolverContext::new(&prep, &hyper).unwrap();
        let n_draw = 5_000;
        let mut errs = [0.0f64; 2];
        for (slot, scores) in [&ycl, &opt.scores].into_iter().enumerate() {
            let sol = ctx.resolve(scores).unwrap();
            let predn = predict_binary_isotropic(&iso, scores).unwrap();
            let zeta = 0.5 * (predn.mean(task, 0, 0) + predn.mean(task, 1, 0));
            let mut err = 0usize;
            for j in 0..2 {
                let x = draw_test(&spec, 900 + j as u64, task, j, n_draw).unwrap();
                let g = ctx.score_batch(&sol, &x, task).unwrap();
                for v in g.row(0).iter() {
                    if usize::from(*v <= zeta) != j {
                        err += 1;
                    }
                }
            }
            errs[slot] = err as f64 / (2 * n_draw) as f64;
        }
        let gap = errs[0] - errs[1];
        emp_gaps.push(gap);
        // binomial noise on the gap at 10k draws
        if gap >= -3.0 * (0.25f64 / (2.0 * n_draw as f64)).sqrt() * 2.0 {
            per_config_ok += 1;
        }
    }
    let mean_gap: f64 = emp_gaps.iter().sum::<f64>() / emp_gaps.len() as f64;
    let pass = theory_ok && per_config_ok == 50 && mean_gap > 0.0;
    println!(
        "criterion 6: {} — exact dominance on all 50 configs: {theory_ok}; empirical gap sign confirmed on {per_config_ok}/50 (mean classical-minus-optimized error gap {:+.3} points)",
        if pass { "PASS" } else { "FAIL" },
        100.0 * mean_gap
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 7: fixed-point correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_fixed_points() {
    let mut worst_iso: f64 = 0.0;
    let mut worst_gen: f64 = 0.0;
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for trial in 0..25u64 {
        let k = 1 + (trial % 4) as usize;
        let p = 40 + rng.random_range(0..200usize);
        let counts: Vec<Vec<usize>> = (0..k)
            .map(|_| vec![10 + rng.random_range(0..300usize), 10 + rng.random_range(0..300usize)])
            .collect();
        let props = ClassProportions::new(p, counts).unwrap();
        let lambda = 10f64.powf(rng.random_range(-2.0..2.0));
        let gamma: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        let hyper = Hyperparams::new(lambda, gamma).unwrap();
        let (delta, _, a_mat) = solve_delta_isotropic(&props, &hyper).unwrap();
        worst_iso = worst_iso.max(delta_residual(&props, &hyper, &delta, &a_mat));
        // general path residual with scalar covariances
        let alphas: Vec<Vec<f64>> = (0..k)
            .map(|_| vec![0.5 + rng.random_range(0.0..2.0), 0.5 + rng.random_range(0.0..2.0)])
            .collect();
        let mut means = Vec::new();
        for _ in 0..k {
            let mut mu = DVector::zeros(p);
            mu[0] = 1.0;
            means.push(vec![mu.clone(), -mu]);
        }
        let stats = SufficientStats::from_known_means(
            props.clone(),
            &means,
            CovModel::Isotropic(alphas.clone()),
        )
        .unwrap();
        let gen = solve_delta_general(&stats, &hyper, DENSE_LIMIT_DEFAULT).unwrap();
        // residual of the general map at the returned point
        let kp = (k * p) as f64;
        for i in 0..k {
            for j in 0..2 {
                let a = 2 * i + j;
                let n_a = props.counts[i][j] as f64;
                let f = n_a / (kp * (1.0 + gen.dtilde[a]));
                worst_gen = worst_gen.max((gen.delta_mk[a] - f).abs());
            }
        }
    }
    // k = 1 closed form
    let props1 = ClassProportions::new(80, vec![vec![50, 70]]).unwrap();
    let hp1 = Hyperparams::new(0.7, vec![1.3]).unwrap();
    let (d1, _, _) = solve_delta_isotropic(&props1, &hp1).unwrap();
    let closed = delta_closed_form_k1(&props1, &hp1).unwrap();
    let closed_gap = (d1[0] - closed).abs();
    let pass = worst_iso < 1e-10 && worst_gen < 1e-9 && closed_gap < 1e-10;
    println!(
        "criterion 7: {} — worst isotropic residual {worst_iso:.2e} (tol 1e-10), worst general residual {worst_gen:.2e} (tol 1e-9), k=1 closed-form gap {closed_gap:.2e} (tol 1e-10)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
