// Scratch calibration driver (removed before release).
use mtl_lssvm::classify::McConfig;
use mtl_lssvm::experiments::{run_fig4, run_table3};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("table3");
    match what {
        "table3" => {
            let mc = McConfig {
                samples: 200_000,
                seed: 5,
            };
            let rows = run_table3(42, &[0.1, 0.5, 0.8], 10_000, &mc).unwrap();
            println!("beta  method      labels      emp     th");
            for r in rows {
                println!(
                    "{:.1}  {:<11} {:<10} {:6.2}  {}",
                    r.beta,
                    r.method,
                    r.labels,
                    r.empirical,
                    r.theoretical.map(|v| format!("{v:6.2}")).unwrap_or("  --  ".into())
                );
            }
        }
        "fig4" => {
            let res = run_fig4(7, 3, 5000).unwrap();
            println!("single task error: {:.4}", res.single_task_error);
            for s in &res.stages {
                println!(
                    "tasks {}: classical {:.4} optimized {:.4}",
                    s.tasks, s.classical_error, s.optimized_error
                );
            }
        }
        "fig4scan" => {
            use mtl_lssvm::labels::{predicted_error_for, LabelMode};
            use mtl_lssvm::model::{ClassProportions, Hyperparams};
            use mtl_lssvm::stats::{CovModel, SufficientStats};
            use nalgebra::DVector;
            let p = 100;
            let counts: [[usize; 2]; 6] = [
                [70, 110],
                [100, 100],
                [60, 80],
                [90, 120],
                [100, 110],
                [30, 30],
            ];
            let betas = [1.0, 0.9, 0.5, 0.2, 0.8];
            for a in [0.6, 0.7, 0.8, 1.0] {
                println!("mean scale {a}:");
                for tasks in 1..=6usize {
                    let props = ClassProportions::new(
                        p,
                        counts[..tasks].iter().map(|c| c.to_vec()).collect(),
                    )
                    .unwrap();
                    let mut means = Vec::new();
                    for t in 0..tasks {
                        let mut mu = DVector::zeros(p);
                        if t == 0 {
                            mu[0] = a;
                        } else {
                            let b = betas[t - 1];
                            mu[0] = b * a;
                            // shared complement direction across added tasks
                            mu[10] = f64::max(1.0 - b * b, 0.0).sqrt() * a;
                        }
                        means.push(vec![mu.clone(), -mu]);
                    }
                    let stats = SufficientStats::from_known_means(
                        props,
                        &means,
                        CovModel::Identity,
                    )
                    .unwrap();
                    let hp = Hyperparams::uniform(tasks, 10.0, 1.0).unwrap();
                    let ec =
                        predicted_error_for(&stats, &hp, 0, LabelMode::Classical).unwrap();
                    let eo =
                        predicted_error_for(&stats, &hp, 0, LabelMode::Optimized).unwrap();
                    // classical decided at threshold zero: averaged class errors
                    let iso = mtl_lssvm::isotropic::build_isotropic_stats(&stats, &hp).unwrap();
                    let y = mtl_lssvm::ScoreAssignment::classical_binary(tasks);
                    let (mm, vv) = iso.law(&y).unwrap();
                    let s = vv[0].sqrt();
                    let e0 = 0.5 * mtl_lssvm::linalg::q_func(mm[0] / s)
                        + 0.5 * (1.0 - mtl_lssvm::linalg::q_func(mm[1] / s));
                    println!("  tasks {tasks}: classical {ec:.4} classical@0 {e0:.4} optimized {eo:.4}");
                }
            }
        }
        "debug" => {
            use mtl_lssvm::classify::{predict_accuracy, MulticlassLabels};
            use mtl_lssvm::experiments::table3_spec;
            use mtl_lssvm::general::{solve_delta_general, DENSE_LIMIT_DEFAULT};
            use mtl_lssvm::labels::{
                optimal_labels_one_hot, optimal_labels_one_vs_all, DescentConfig,
                OneHotAscentConfig,
            };
            use mtl_lssvm::model::Hyperparams;
            use mtl_lssvm::synth::generate_synthetic;
            use mtl_lssvm::ScoreAssignment;
            use nalgebra::DVector;
            let beta = 0.1;
            let spec = table3_spec(beta, 42);
            let (_, _, truth) = generate_synthetic(&spec).unwrap();
            let hp = Hyperparams::uniform(2, 1.0, 1.0).unwrap();
            let gen = solve_delta_general(&truth, &hp, DENSE_LIMIT_DEFAULT).unwrap();
            let mc = McConfig { samples: 400_000, seed: 11 };
            for t in 0..2 {
                let classical = ScoreAssignment::one_hot(2, 5);
                let rep_c =
                    predict_accuracy(&gen, &MulticlassLabels::OneHot(&classical), t, &mc).unwrap();
                let opt = optimal_labels_one_hot(&gen, t, &OneHotAscentConfig::default()).unwrap();
                let rep_o =
                    predict_accuracy(&gen, &MulticlassLabels::OneHot(&opt.scores), t, &mc).unwrap();
                println!(
                    "task {t}: one-hot classical acc {:.4}, ascent objective {:.4}, optimized acc {:.4} (converged {})",
                    rep_c.mean, opt.objective, rep_o.mean, opt.converged
                );
                // one-vs-all: classical vs optimized predicted accuracy
                let mut cl_scores = Vec::new();
                for ell in 0..5 {
                    let mut y = DVector::from_element(10, -1.0);
                    for i in 0..2 {
                        y[5 * i + ell] = 1.0;
                    }
                    cl_scores.push(ScoreAssignment::Binary(y));
                }
                let ones = DVector::from_element(5, 1.0);
                let rep_ova_c = predict_accuracy(
                    &gen,
                    &MulticlassLabels::OneVsAll { scores: &cl_scores, scales: &ones },
                    t,
                    &mc,
                )
                .unwrap();
                let mut opt_scores = Vec::new();
                let mut scales = DVector::from_element(5, 1.0);
                for ell in 0..5 {
                    let o =
                        optimal_labels_one_vs_all(&gen, t, ell, &DescentConfig::default()).unwrap();
                    println!(
                        "  ova ell={ell}: worst-Q {:.4} grad_norm {:?} converged {} shift {:.4}",
                        o.objective, o.grad_norm, o.converged, o.shift
                    );
                    let pred =
                        mtl_lssvm::general::predict_general(&gen, &o.scores).unwrap();
                    scales[ell] = pred.covs[5 * t + ell][(0, 0)].sqrt();
                    opt_scores.push(o.scores);
                }
                let rep_ova_o = predict_accuracy(
                    &gen,
                    &MulticlassLabels::OneVsAll { scores: &opt_scores, scales: &scales },
                    t,
                    &mc,
                )
                .unwrap();
                println!(
                    "task {t}: ova classical acc {:.4}, ova optimized acc {:.4}",
                    rep_ova_c.mean, rep_ova_o.mean
                );
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
