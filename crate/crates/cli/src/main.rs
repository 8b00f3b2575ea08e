//! Command-line surface: synthetic data generation, training, prediction,
//! theoretical accuracy reports, ROC curves, relatedness sweeps, and the
//! bundled experiment presets.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use mtl_lssvm::classify::{
    predict_accuracy, train_binary, train_one_hot, train_one_vs_all, train_one_vs_one,
    ClassifierKind, McConfig, MulticlassLabels, StatsSource, TrainOptions, TrainedClassifier,
};
use mtl_lssvm::experiments::{run_experiment, run_roc, run_sweep, ExperimentConfig};
use mtl_lssvm::io::{load_dataset, save_dataset, write_table, ResultDoc};
use mtl_lssvm::labels::LabelMode;
use mtl_lssvm::model::{Hyperparams, NormMode};
use mtl_lssvm::stats::CovStrategy;
use mtl_lssvm::synth::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "mtl",
    about = "Multi-task least-squares SVM training, prediction and benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Base seed for all random streams.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Statistic source: `true` uses ground truth from the config,
    /// `estimated` re-estimates from the training data.
    #[arg(long, global = true, default_value = "estimated")]
    stats: String,
    /// Label mode.
    #[arg(long, global = true, default_value = "optimized")]
    labels: String,
    /// Task-wise normalization mode (none, trace, sqrt_trace).
    #[arg(long, global = true, default_value = "none")]
    norm: String,
}

#[derive(Args)]
struct DataArgs {
    /// Training dataset CSV (header `task,class,f1,...,fp`).
    #[arg(long)]
    data: PathBuf,
    /// Synthetic spec JSON with ground-truth statistics (required with
    /// --stats true).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Relatedness coefficient.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Per-task ridge weight (uniform).
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Classifier kind: binary, one-vs-all, one-vs-one, one-hot.
    #[arg(long, default_value = "binary")]
    kind: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/test CSV plus the resolved spec).
    Gen {
        /// Synthetic spec JSON; use `--preset` for a bundled config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bundled spec: table3-beta<val>, fig2-beta<val>, roc.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a classifier and write the decision summary.
    Train(DataArgs),
    /// Train and classify a test CSV; writes per-sample decisions and
    /// accuracy when the test file carries labels.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// Test dataset CSV.
        #[arg(long)]
        test: PathBuf,
        /// Task whose machine decides (1-based).
        #[arg(long, default_value_t = 1)]
        task: usize,
    },
    /// Theoretical accuracy report for the argmax pipelines.
    Accuracy(DataArgs),
    /// Hypothesis-test ROC on the bundled benchmark config.
    Roc {
        /// Test draws per class.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Predicted-error sweep over the relatedness coefficient.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target task (1-based).
        #[arg(long, default_value_t = 1)]
        task: usize,
    },
    /// Run a bundled experiment preset end to end.
    Report {
        /// One of: table3, fig2, fig4, roc, sweep.
        #[arg(long)]
        preset: String,
        /// Override the test-sample budget.
        #[arg(long)]
        test_samples: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // one categorized error line, nonzero exit
        if let Some(lib) = e.downcast_ref::<mtl_lssvm::Error>() {
            eprintln!("error[{}]: {lib}", lib.category());
        } else {
            eprintln!("error[cli]: {e:#}");
        }
        std::process::exit(1);
    }
}

fn parse_labels(s: &str) -> anyhow::Result<LabelMode> {
    match s {
        "classical" => Ok(LabelMode::Classical),
        "optimized" => Ok(LabelMode::Optimized),
        other => bail!("unknown label mode `{other}`"),
    }
}

fn parse_norm(s: &str) -> anyhow::Result<NormMode> {
    s.parse::<NormMode>().map_err(|e| anyhow!(e))
}

fn load_spec(path: &PathBuf) -> anyhow::Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn stats_source(
    cli_stats: &str,
    config: &Option<PathBuf>,
) -> anyhow::Result<StatsSource> {
    match cli_stats {
        "true" => {
            let path = config
                .as_ref()
                .ok_or_else(|| anyhow!("--stats true requires --config <spec.json>"))?;
            let spec = load_spec(path)?;
            let (_, _, truth) = generate_synthetic(&spec)?;
            Ok(StatsSource::Known(truth))
        }
        "estimated" => Ok(StatsSource::Estimated { cov: None }),
        "estimated-isotropic" => Ok(StatsSource::Estimated {
            cov: Some(CovStrategy::Isotropic),
        }),
        "estimated-sample" => Ok(StatsSource::Estimated {
            cov: Some(CovStrategy::Sample),
        }),
        other => bail!("unknown stats source `{other}`"),
    }
}

fn train_any(
    kind: &str,
    data: &mtl_lssvm::MtlDataset,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> anyhow::Result<TrainedClassifier> {
    Ok(match kind {
        "binary" => train_binary(data, hyper, opts)?,
        "one-vs-all" => train_one_vs_all(data, hyper, opts)?,
        "one-vs-one" => train_one_vs_one(data, hyper, opts)?,
        "one-hot" => train_one_hot(data, hyper, opts)?,
        other => bail!("unknown classifier kind `{other}`"),
    })
}

fn bundled_spec(preset: &str, seed: u64) -> anyhow::Result<SyntheticSpec> {
    use mtl_lssvm::experiments as exp;
    if let Some(rest) = preset.strip_prefix("table3-beta") {
        let beta: f64 = rest.parse().context("beta suffix")?;
        return Ok(exp::table3_spec(beta, seed));
    }
    if let Some(rest) = preset.strip_prefix("fig2-beta") {
        let beta: f64 = rest.parse().context("beta suffix")?;
        return Ok(exp::fig2_spec(beta, 1000, seed));
    }
    if preset == "roc" {
        return Ok(exp::roc_spec(seed));
    }
    bail!("unknown gen preset `{preset}`")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let labels = parse_labels(&cli.labels)?;
    let norm = parse_norm(&cli.norm)?;
    match &cli.command {
        Command::Gen { config, preset } => {
            let mut spec = match (config, preset) {
                (Some(path), _) => load_spec(path)?,
                (None, Some(p)) => bundled_spec(p, cli.seed)?,
                (None, None) => bail!("gen needs --config or --preset"),
            };
            spec.seed = cli.seed;
            if spec.test_per_class == 0 {
                spec.test_per_class = 500;
            }
            let (train, test, _) = generate_synthetic(&spec)?;
            save_dataset(&cli.out.join("train.csv"), &train)?;
            let test_ds = mtl_lssvm::MtlDataset::new(test)?;
            save_dataset(&cli.out.join("test.csv"), &test_ds)?;
            std::fs::write(
                cli.out.join("spec.json"),
                serde_json::to_string_pretty(&spec)?,
            )?;
            println!(
                "wrote train.csv ({} samples), test.csv ({} samples), spec.json to {}",
                train.n(),
                test_ds.n(),
                cli.out.display()
            );
        }
        Command::Train(args) => {
            let data = load_dataset(&args.data)?;
            let hyper = Hyperparams::uniform(data.k(), args.lambda, args.gamma)?;
            let mut opts = TrainOptions::new(labels, stats_source(&cli.stats, &args.config)?);
            opts.norm = norm;
            let clf = train_any(&args.kind, &data, &hyper, &opts)?;
            let mut doc = ResultDoc::new("train", cli.seed, serde_json::json!({
                "kind": args.kind, "lambda": args.lambda, "gamma": args.gamma,
                "labels": cli.labels, "stats": cli.stats, "norm": cli.norm,
            }));
            summarize_classifier(&clf, &mut doc);
            doc.write(&cli.out.join("model.json"))?;
            println!("trained {} classifier; summary in {}", args.kind, cli.out.join("model.json").display());
        }
        Command::Predict { data: args, test, task } => {
            let data = load_dataset(&args.data)?;
            let test_ds = load_dataset(test)?;
            if *task < 1 || *task > data.k() {
                bail!("task {} out of range 1..{}", task, data.k());
            }
            let t = *task - 1;
            let hyper = Hyperparams::uniform(data.k(), args.lambda, args.gamma)?;
            let mut opts = TrainOptions::new(labels, stats_source(&cli.stats, &args.config)?);
            opts.norm = norm;
            let clf = train_any(&args.kind, &data, &hyper, &opts)?;
            let mut rows = Vec::new();
            let mut hits = 0usize;
            let mut total = 0usize;
            for j in 0..test_ds.m() {
                let block = test_ds.block(t, j);
                let decided = clf.classify_batch(block, t)?;
                for (c, d) in decided.iter().enumerate() {
                    rows.push(vec![(j + 1) as f64, (d + 1) as f64, c as f64]);
                    hits += usize::from(*d == j);
                    total += 1;
                }
            }
            write_table(&cli.out.join("predictions.csv"), &["true_class", "decided_class", "index"], &rows)?;
            let mut doc = ResultDoc::new("predict", cli.seed, serde_json::json!({
                "kind": args.kind, "task": task, "lambda": args.lambda, "gamma": args.gamma,
                "labels": cli.labels, "stats": cli.stats, "norm": cli.norm,
            }));
            doc.insert("accuracy", hits as f64 / total as f64);
            doc.insert("samples", total);
            doc.tables.push("predictions.csv".into());
            doc.write(&cli.out.join("result.json"))?;
            println!("accuracy {:.4} over {} samples", hits as f64 / total as f64, total);
        }
        Command::Accuracy(args) => {
            let data = load_dataset(&args.data)?;
            let hyper = Hyperparams::uniform(data.k(), args.lambda, args.gamma)?;
            let mut opts = TrainOptions::new(labels, stats_source(&cli.stats, &args.config)?);
            opts.norm = norm;
            let clf = train_any(&args.kind, &data, &hyper, &opts)?;
            let gen = clf
                .stats
                .as_ref()
                .ok_or_else(|| anyhow!("{} has no theoretical accuracy predictor (empirical only)", args.kind))?;
            let mut doc = ResultDoc::new("accuracy", cli.seed, serde_json::json!({
                "kind": args.kind, "lambda": args.lambda, "gamma": args.gamma,
                "labels": cli.labels, "stats": cli.stats, "norm": cli.norm,
            }));
            let mc = McConfig::default();
            for t in 0..data.k() {
                let report = match clf.kind {
                    ClassifierKind::OneHot | ClassifierKind::Binary => predict_accuracy(
                        gen,
                        &MulticlassLabels::OneHot(&clf.labels_used[t][0].scores),
                        t,
                        &mc,
                    ),
                    ClassifierKind::OneVsAll => {
                        let scores: Vec<_> =
                            clf.labels_used[t].iter().map(|l| l.scores.clone()).collect();
                        let m = data.m();
                        let scales = match &clf.rules[t] {
                            mtl_lssvm::labels::DecisionRule::ArgmaxScaled { scales } => {
                                nalgebra::DVector::from_fn(m, |c, _| scales[(0, c)])
                            }
                            _ => nalgebra::DVector::from_element(m, 1.0),
                        };
                        predict_accuracy(
                            gen,
                            &MulticlassLabels::OneVsAll { scores: &scores, scales: &scales },
                            t,
                            &mc,
                        )
                    }
                    ClassifierKind::OneVsOne => {
                        bail!("one-vs-one accuracy is empirical only; use `predict`")
                    }
                };
                let report = report?;
                doc.insert(
                    &format!("task{}", t + 1),
                    serde_json::json!({
                        "mean": report.mean,
                        "per_class": report.per_class.iter().map(|v| v.0).collect::<Vec<_>>(),
                        "std_errors": report.per_class.iter().map(|v| v.1).collect::<Vec<_>>(),
                    }),
                );
                println!("task {}: predicted accuracy {:.4}", t + 1, report.mean);
            }
            doc.write(&cli.out.join("accuracy.json"))?;
        }
        Command::Roc { draws } => {
            let etas = mtl_lssvm::experiments::default_eta_grid();
            let rows = run_roc(cli.seed, &etas, *draws, labels)?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.eta, r.threshold, r.theoretical, r.empirical, r.ci_low, r.ci_high, r.empirical_false_alarm])
                .collect();
            write_table(
                &cli.out.join("roc.csv"),
                &["eta", "threshold", "theoretical", "empirical", "ci_low", "ci_high", "empirical_false_alarm"],
                &table,
            )?;
            println!("wrote {} ROC points to {}", rows.len(), cli.out.join("roc.csv").display());
        }
        Command::Sweep { data, config, task } => {
            let ds = load_dataset(data)?;
            if *task < 1 || *task > ds.k() {
                bail!("task {} out of range 1..{}", task, ds.k());
            }
            let stats = match stats_source(&cli.stats, config)? {
                StatsSource::Known(s) => s,
                StatsSource::Estimated { .. } => {
                    let prep = mtl_lssvm::preprocess(&ds, norm)?;
                    mtl_lssvm::stats::estimate_mean_products(&prep)?
                }
            };
            let lambdas: Vec<f64> = (0..13).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect();
            let rows = run_sweep(0.0, &lambdas, &stats, *task - 1)?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.lambda, r.predicted_classical, r.predicted_optimized])
                .collect();
            write_table(
                &cli.out.join("sweep.csv"),
                &["lambda", "predicted_classical", "predicted_optimized"],
                &table,
            )?;
            println!("wrote sweep.csv to {}", cli.out.display());
        }
        Command::Report { preset, test_samples } => {
            let cfg = ExperimentConfig {
                preset: preset.clone(),
                seed: cli.seed,
                out_dir: cli.out.clone(),
                betas: None,
                test_samples: *test_samples,
                labels: Some(cli.labels.clone()),
            };
            let path = run_experiment(&cfg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn summarize_classifier(clf: &TrainedClassifier, doc: &mut ResultDoc) {
    for t in 0..clf.k() {
        let labels: Vec<Vec<f64>> = clf.labels_used[t]
            .iter()
            .map(|l| {
                let m = l.scores.matrix();
                DMatrix::from(m).iter().cloned().collect()
            })
            .collect();
        let rule = match &clf.rules[t] {
            mtl_lssvm::labels::DecisionRule::Threshold { zeta, predicted_error } => serde_json::json!({
                "kind": "threshold",
                "zeta": zeta[t],
                "predicted_error": predicted_error[t],
            }),
            mtl_lssvm::labels::DecisionRule::Argmax => serde_json::json!({"kind": "argmax"}),
            mtl_lssvm::labels::DecisionRule::ArgmaxScaled { scales } => serde_json::json!({
                "kind": "argmax_scaled",
                "scales": scales.row(0).iter().cloned().collect::<Vec<_>>(),
            }),
        };
        doc.insert(
            &format!("task{}", t + 1),
            serde_json::json!({ "labels": labels, "rule": rule }),
        );
    }
}
