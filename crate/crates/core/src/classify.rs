//! End-to-end classifier pipelines (train, calibrate, decide), theoretical
//! accuracy prediction via orthant probabilities, and ROC construction.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::general::{predict_general, solve_delta_general, GeneralStats, DENSE_LIMIT_DEFAULT};
use crate::labels::{
    decision_threshold, diff_transform, optimal_labels_general, optimal_labels_one_hot,
    optimal_labels_one_vs_all, DecisionRule, DescentConfig, LabelMode, OneHotAscentConfig,
    OptimizedLabels, Provenance,
};
use crate::linalg::{self, q_func};
use crate::model::{
    preprocess, ClassProportions, Hyperparams, MtlDataset, NormMode, Preprocessed,
    ScoreAssignment,
};
use crate::prediction::ScorePrediction;
use crate::solver::{score_batch_raw, DualSolution, SolverContext};
use crate::stats::{estimate_mean_products, CovModel, CovStrategy, SufficientStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Binary,
    OneVsAll,
    OneVsOne,
    OneHot,
}

/// Where the sufficient statistics for calibration come from.
#[derive(Debug, Clone)]
pub enum StatsSource {
    Known(SufficientStats),
    /// Plug-in estimation from the training data; `cov` selects the
    /// covariance strategy (None assumes identity, matching the normalized
    /// pipelines).
    Estimated { cov: Option<CovStrategy> },
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub norm: NormMode,
    pub labels: LabelMode,
    pub stats: StatsSource,
    /// Collapse the rest-classes into one pseudo-class when calibrating the
    /// one-vs-all machines (the simplified variant; kept for comparison).
    pub naive_one_vs_all: bool,
    pub descent: DescentConfig,
    pub one_hot: OneHotAscentConfig,
}

impl TrainOptions {
    pub fn new(labels: LabelMode, stats: StatsSource) -> Self {
        Self {
            norm: NormMode::None,
            labels,
            stats,
            naive_one_vs_all: false,
            descent: DescentConfig::default(),
            one_hot: OneHotAscentConfig::default(),
        }
    }
}

struct Base {
    prep: Preprocessed,
    coupling: DMatrix<f64>,
    offsets: Vec<usize>,
    /// duals[task][machine]
    duals: Vec<Vec<DualSolution>>,
}

struct PairMachine {
    classes: (usize, usize),
    prep: Preprocessed,
    coupling: DMatrix<f64>,
    offsets: Vec<usize>,
    /// One dual and threshold per target task.
    duals: Vec<DualSolution>,
    zetas: Vec<f64>,
}

/// A trained multi-task classifier. Each target task carries its own label
/// set (and thus its own dual variables): task `i` decisions use machinery
/// optimized for task `i`.
pub struct TrainedClassifier {
    pub kind: ClassifierKind,
    pub hyper: Hyperparams,
    pub labels_used: Vec<Vec<OptimizedLabels>>,
    pub rules: Vec<DecisionRule>,
    pub predictions: Vec<Option<ScorePrediction>>,
    /// Statistics used for calibration (None when no theory was needed).
    pub stats: Option<GeneralStats>,
    base: Option<Base>,
    pairs: Vec<PairMachine>,
    dims: (usize, usize, usize),
}

fn classical_labels(kind: ClassifierKind, k: usize, m: usize) -> Vec<ScoreAssignment> {
    match kind {
        ClassifierKind::Binary => vec![ScoreAssignment::Binary(DVector::from_fn(
            2 * k,
            |r, _| if r % 2 == 0 { 1.0 } else { -1.0 },
        ))],
        ClassifierKind::OneHot => vec![ScoreAssignment::one_hot(k, m)],
        ClassifierKind::OneVsAll => (0..m)
            .map(|ell| {
                ScoreAssignment::Binary(DVector::from_fn(k * m, |r, _| {
                    if r % m == ell {
                        1.0
                    } else {
                        -1.0
                    }
                }))
            })
            .collect(),
        ClassifierKind::OneVsOne => unreachable!("pairwise labels are built per pair"),
    }
}

fn wrap(scores: ScoreAssignment) -> OptimizedLabels {
    OptimizedLabels {
        scores,
        objective: f64::NAN,
        shift: 0.0,
        provenance: Provenance::ClosedForm,
        grad_norm: None,
        converged: true,
        flagged: false,
    }
}

fn build_stats(
    prep: &Preprocessed,
    opts: &TrainOptions,
) -> Result<SufficientStats> {
    match &opts.stats {
        StatsSource::Known(s) => Ok(s.clone()),
        StatsSource::Estimated { cov } => {
            let mut est = estimate_mean_products(prep)?;
            if let Some(strategy) = cov {
                est.cov = crate::stats::estimate_covariances(prep, *strategy);
            }
            Ok(est)
        }
    }
}

/// Train the binary pipeline: estimate statistics, create labels, compute
/// the averaged-mean thresholds, and keep per-task duals.
pub fn train_binary(
    data: &MtlDataset,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    if data.m() != 2 {
        return Err(Error::ModelMismatch("binary pipeline requires m = 2".into()));
    }
    let prep = preprocess(data, opts.norm)?;
    let stats = build_stats(&prep, opts)?;
    let gen = solve_delta_general(&stats, hyper, DENSE_LIMIT_DEFAULT)?;
    let ctx = SolverContext::new(&prep, hyper)?;
    let k = data.k();
    let mut labels_used = Vec::with_capacity(k);
    let mut rules = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(k);
    let mut duals = Vec::with_capacity(k);
    for t in 0..k {
        let lab = match opts.labels {
            LabelMode::Classical => wrap(classical_labels(ClassifierKind::Binary, k, 2)[0].clone()),
            LabelMode::Optimized => optimal_labels_general(&gen, t)?,
        };
        let pred = predict_general(&gen, &lab.scores)?;
        let rule = decision_threshold(&pred, t)?;
        duals.push(vec![ctx.resolve(&lab.scores)?]);
        labels_used.push(vec![lab]);
        predictions.push(Some(pred));
        rules.push(rule);
    }
    let offsets = ctx.task_offsets().to_vec();
    let coupling = hyper.coupling();
    drop(ctx);
    Ok(TrainedClassifier {
        kind: ClassifierKind::Binary,
        hyper: hyper.clone(),
        labels_used,
        rules,
        predictions,
        stats: Some(gen),
        base: Some(Base {
            prep,
            coupling,
            offsets,
            duals,
        }),
        pairs: Vec::new(),
        dims: (data.k(), data.m(), data.p()),
    })
}

/// The per-class machines of the one-vs-all pipeline. Classical labels use
/// the plain argmax; optimized labels are tuned per class, rescaled to unit
/// own-class variance, shifted to zero own-class mean, and the decision
/// divides by the (recomputed) own-class deviation as the recipe prints it.
pub fn train_one_vs_all(
    data: &MtlDataset,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    let prep = preprocess(data, opts.norm)?;
    let stats = build_stats(&prep, opts)?;
    let gen = solve_delta_general(&stats, hyper, DENSE_LIMIT_DEFAULT)?;
    let ctx = SolverContext::new(&prep, hyper)?;
    let (k, m) = (data.k(), data.m());
    let mut labels_used = Vec::with_capacity(k);
    let mut rules = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(k);
    let mut duals = Vec::with_capacity(k);
    for t in 0..k {
        let mut labs = Vec::with_capacity(m);
        let mut tduals = Vec::with_capacity(m);
        let mut scales = DVector::from_element(m, 1.0);
        for ell in 0..m {
            let lab = match (opts.labels, opts.naive_one_vs_all) {
                (LabelMode::Classical, false) => {
                    wrap(classical_labels(ClassifierKind::OneVsAll, k, m)[ell].clone())
                }
                (LabelMode::Classical, true) => naive_calibrated_labels(&stats, hyper, t, ell)?,
                (LabelMode::Optimized, _) => {
                    optimal_labels_one_vs_all(&gen, t, ell, &opts.descent)?
                }
            };
            if !matches!((opts.labels, opts.naive_one_vs_all), (LabelMode::Classical, false)) {
                // own-class deviation recomputed from the final labels; after
                // the normalization inside the optimizer this is 1 up to
                // rounding, and the division below is the literal final step
                let pred = predict_general(&gen, &lab.scores)?;
                scales[ell] = pred.covs[m * t + ell][(0, 0)].max(0.0).sqrt().max(1e-300);
            }
            tduals.push(ctx.resolve(&lab.scores)?);
            labs.push(lab);
        }
        let rule = if matches!(opts.labels, LabelMode::Classical) && !opts.naive_one_vs_all {
            DecisionRule::Argmax
        } else {
            DecisionRule::ArgmaxScaled {
                scales: DMatrix::from_fn(1, m, |_, c| scales[c]),
            }
        };
        // joint prediction across the m machines (columns = machines)
        let mut stack = DMatrix::zeros(k * m, m);
        for (ell, lab) in labs.iter().enumerate() {
            stack.set_column(ell, &lab.scores.matrix().column(0).into_owned());
        }
        let pred = predict_general(&gen, &ScoreAssignment::Vector(stack))?;
        labels_used.push(labs);
        duals.push(tduals);
        rules.push(rule);
        predictions.push(Some(pred));
    }
    let offsets = ctx.task_offsets().to_vec();
    let coupling = hyper.coupling();
    drop(ctx);
    Ok(TrainedClassifier {
        kind: ClassifierKind::OneVsAll,
        hyper: hyper.clone(),
        labels_used,
        rules,
        predictions,
        stats: Some(gen),
        base: Some(Base {
            prep,
            coupling,
            offsets,
            duals,
        }),
        pairs: Vec::new(),
        dims: (k, m, data.p()),
    })
}

/// The collapsed-rest calibration: treat the complement of class `ell` as a
/// single pseudo-class with pooled mean and identity covariance, run the
/// binary theory on the fictitious two-class problem, and shift/scale the
/// +-1 labels so the own-class score has zero mean and unit deviation.
fn naive_calibrated_labels(
    stats: &SufficientStats,
    hyper: &Hyperparams,
    task: usize,
    ell: usize,
) -> Result<OptimizedLabels> {
    let props = &stats.props;
    let (k, m) = (props.k(), props.m());
    let means = stats
        .means
        .as_ref()
        .ok_or_else(|| Error::ModelMismatch("collapsed calibration needs mean vectors".into()))?;
    let counts: Vec<Vec<usize>> = (0..k)
        .map(|i| {
            let rest: usize = (0..m).filter(|&j| j != ell).map(|j| props.counts[i][j]).sum();
            vec![props.counts[i][ell], rest]
        })
        .collect();
    let fprops = ClassProportions::new(props.p, counts)?;
    let fict: Vec<Vec<DVector<f64>>> = (0..k)
        .map(|i| {
            let rest_n: f64 = (0..m)
                .filter(|&j| j != ell)
                .map(|j| props.counts[i][j] as f64)
                .sum();
            let mut rest = DVector::zeros(props.p);
            for j in 0..m {
                if j != ell {
                    rest.axpy(props.counts[i][j] as f64 / rest_n, &means[i][j], 1.0);
                }
            }
            vec![means[i][ell].clone(), rest]
        })
        .collect();
    let fstats = SufficientStats::from_known_means(fprops, &fict, CovModel::Identity)?;
    let iso = crate::isotropic::build_isotropic_stats(&fstats, hyper)?;
    let y2 = ScoreAssignment::classical_binary(k);
    let (fm, fv) = iso.law(&y2)?;
    let sigma = fv[task].sqrt();
    // expand the fictitious +-1 pattern to the m-class label vector, then
    // shift/scale using the collapsed-model statistics
    let mut y = DVector::from_element(k * m, -1.0);
    for i in 0..k {
        y[m * i + ell] = 1.0;
    }
    y /= sigma;
    let shift = -fm[2 * task] / sigma;
    for j in 0..m {
        y[m * task + j] += shift;
    }
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Binary(y),
        objective: f64::NAN,
        shift,
        provenance: Provenance::ClosedForm,
        grad_norm: None,
        converged: true,
        flagged: true,
    })
}

/// Pairwise machines with majority vote; ties go to the smallest class index.
pub fn train_one_vs_one(
    data: &MtlDataset,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    let (k, m) = (data.k(), data.m());
    let full_stats_known = match &opts.stats {
        StatsSource::Known(s) => Some(s.clone()),
        _ => None,
    };
    let mut pairs = Vec::new();
    let mut labels_used: Vec<Vec<OptimizedLabels>> = vec![Vec::new(); k];
    for ja in 0..m {
        for jb in ja + 1..m {
            let sub = data.restrict_classes(&[ja, jb])?;
            let prep = preprocess(&sub, opts.norm)?;
            let stats = match &full_stats_known {
                Some(s) => s.restrict_classes(&[ja, jb])?,
                None => build_stats(&prep, opts)?,
            };
            let gen = solve_delta_general(&stats, hyper, DENSE_LIMIT_DEFAULT)?;
            let ctx = SolverContext::new(&prep, hyper)?;
            let mut duals = Vec::with_capacity(k);
            let mut zetas = Vec::with_capacity(k);
            for t in 0..k {
                let lab = match opts.labels {
                    LabelMode::Classical => {
                        wrap(classical_labels(ClassifierKind::Binary, k, 2)[0].clone())
                    }
                    LabelMode::Optimized => optimal_labels_general(&gen, t)?,
                };
                let zeta = match opts.labels {
                    LabelMode::Classical => 0.0,
                    LabelMode::Optimized => {
                        let pred = predict_general(&gen, &lab.scores)?;
                        0.5 * (pred.mean(t, 0, 0) + pred.mean(t, 1, 0))
                    }
                };
                duals.push(ctx.resolve(&lab.scores)?);
                zetas.push(zeta);
                labels_used[t].push(lab);
            }
            let offsets = ctx.task_offsets().to_vec();
            let coupling = hyper.coupling();
            drop(ctx);
            pairs.push(PairMachine {
                classes: (ja, jb),
                prep,
                coupling,
                offsets,
                duals,
                zetas,
            });
        }
    }
    Ok(TrainedClassifier {
        kind: ClassifierKind::OneVsOne,
        hyper: hyper.clone(),
        labels_used,
        rules: (0..k).map(|_| DecisionRule::Argmax).collect(),
        predictions: (0..k).map(|_| None).collect(),
        stats: None,
        base: None,
        pairs,
        dims: (k, m, data.p()),
    })
}

/// One machine with m outputs; decision by argmax.
pub fn train_one_hot(
    data: &MtlDataset,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    let prep = preprocess(data, opts.norm)?;
    let stats = build_stats(&prep, opts)?;
    let gen = solve_delta_general(&stats, hyper, DENSE_LIMIT_DEFAULT)?;
    let ctx = SolverContext::new(&prep, hyper)?;
    let (k, m) = (data.k(), data.m());
    let mut labels_used = Vec::with_capacity(k);
    let mut duals = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(k);
    for t in 0..k {
        let lab = match opts.labels {
            LabelMode::Classical => wrap(classical_labels(ClassifierKind::OneHot, k, m)[0].clone()),
            LabelMode::Optimized => {
                let mut cfg = opts.one_hot.clone();
                cfg.seed = cfg.seed.wrapping_add(t as u64);
                optimal_labels_one_hot(&gen, t, &cfg)?
            }
        };
        let pred = predict_general(&gen, &lab.scores)?;
        duals.push(vec![ctx.resolve(&lab.scores)?]);
        labels_used.push(vec![lab]);
        predictions.push(Some(pred));
    }
    let offsets = ctx.task_offsets().to_vec();
    let coupling = hyper.coupling();
    drop(ctx);
    Ok(TrainedClassifier {
        kind: ClassifierKind::OneHot,
        hyper: hyper.clone(),
        labels_used,
        rules: (0..k).map(|_| DecisionRule::Argmax).collect(),
        predictions,
        stats: Some(gen),
        base: Some(Base {
            prep,
            coupling,
            offsets,
            duals,
        }),
        pairs: Vec::new(),
        dims: (k, m, data.p()),
    })
}

impl TrainedClassifier {
    pub fn k(&self) -> usize {
        self.dims.0
    }

    pub fn m(&self) -> usize {
        self.dims.1
    }

    /// Decide classes for a batch of raw test points (columns), 0-based.
    pub fn classify_batch(&self, x: &DMatrix<f64>, task: usize) -> Result<Vec<usize>> {
        let m = self.m();
        match self.kind {
            ClassifierKind::Binary => {
                let base = self.base.as_ref().expect("binary base");
                let g = score_batch_raw(
                    &base.prep,
                    &base.coupling,
                    &base.offsets,
                    &base.duals[task][0],
                    x,
                    task,
                )?;
                let zeta = match &self.rules[task] {
                    DecisionRule::Threshold { zeta, .. } => zeta[task],
                    _ => 0.0,
                };
                Ok(g.row(0).iter().map(|&v| usize::from(v < zeta)).collect())
            }
            ClassifierKind::OneHot => {
                let base = self.base.as_ref().expect("one-hot base");
                let g = score_batch_raw(
                    &base.prep,
                    &base.coupling,
                    &base.offsets,
                    &base.duals[task][0],
                    x,
                    task,
                )?;
                Ok((0..x.ncols())
                    .map(|c| (0..m).max_by(|&a, &b| g[(a, c)].total_cmp(&g[(b, c)])).unwrap())
                    .collect())
            }
            ClassifierKind::OneVsAll => {
                let base = self.base.as_ref().expect("one-vs-all base");
                let mut scores = Vec::with_capacity(m);
                for ell in 0..m {
                    let g = score_batch_raw(
                        &base.prep,
                        &base.coupling,
                        &base.offsets,
                        &base.duals[task][ell],
                        x,
                        task,
                    )?;
                    let s = match &self.rules[task] {
                        DecisionRule::ArgmaxScaled { scales } => scales[(0, ell)],
                        _ => 1.0,
                    };
                    scores.push(g.row(0).into_owned() / s);
                }
                Ok((0..x.ncols())
                    .map(|c| {
                        (0..m)
                            .max_by(|&a, &b| scores[a][c].total_cmp(&scores[b][c]))
                            .unwrap()
                    })
                    .collect())
            }
            ClassifierKind::OneVsOne => {
                let mut votes = vec![vec![0usize; x.ncols()]; m];
                for pair in &self.pairs {
                    let g = score_batch_raw(
                        &pair.prep,
                        &pair.coupling,
                        &pair.offsets,
                        &pair.duals[task],
                        x,
                        task,
                    )?;
                    let zeta = pair.zetas[task];
                    for c in 0..x.ncols() {
                        if g[(0, c)] > zeta {
                            votes[pair.classes.0][c] += 1;
                        } else {
                            votes[pair.classes.1][c] += 1;
                        }
                    }
                }
                // most votes; ties resolved toward the smallest class index
                Ok((0..x.ncols())
                    .map(|c| {
                        let mut best = 0;
                        for j in 1..m {
                            if votes[j][c] > votes[best][c] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect())
            }
        }
    }

    pub fn classify(&self, x: &DVector<f64>, task: usize) -> Result<usize> {
        Ok(self
            .classify_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()), task)?[0])
    }

    /// Raw scores of the task's first machine (binary and one-hot kinds),
    /// for evaluation helpers that need threshold overrides.
    pub fn score_raw(&self, x: &DMatrix<f64>, task: usize) -> Result<DMatrix<f64>> {
        match self.kind {
            ClassifierKind::Binary | ClassifierKind::OneHot => {
                let base = self.base.as_ref().expect("base kinds have a base");
                score_batch_raw(
                    &base.prep,
                    &base.coupling,
                    &base.offsets,
                    &base.duals[task][0],
                    x,
                    task,
                )
            }
            _ => Err(Error::ModelMismatch("raw scores for base kinds only".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Orthant probabilities and accuracy prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0x5eed,
        }
    }
}

/// Monte-Carlo estimate (antithetic pairs) of P(N(mean, cov) > 0 coordinate-
/// wise). Returns (probability, standard error). Deterministic per seed.
pub fn orthant_probability(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch("orthant covariance shape".into()));
    }
    let (_, l) = linalg::psd_factor(cov, 1e-8)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let normal = rand_distr::StandardNormal;
    let pairs = (cfg.samples / 2).max(1);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    const CHUNK: usize = 16_384;
    let mut done = 0;
    while done < pairs {
        let c = CHUNK.min(pairs - done);
        let u = DMatrix::from_fn(d, c, |_, _| {
            let v: f64 = normal.sample(&mut rng);
            v
        });
        let lu = &l * &u;
        for col in 0..c {
            let hit_plus = (0..d).all(|r| mean[r] + lu[(r, col)] > 0.0);
            let hit_minus = (0..d).all(|r| mean[r] - lu[(r, col)] > 0.0);
            let v = (usize::from(hit_plus) + usize::from(hit_minus)) as f64 / 2.0;
            sum += v;
            sumsq += v * v;
        }
        done += c;
    }
    let n = pairs as f64;
    let p = sum / n;
    let var = (sumsq / n - p * p).max(0.0);
    Ok((p, (var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyMethod {
    McOrthant,
    ClosedForm1d,
    EmpiricalOnly,
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    /// Per class: (probability of correct classification, standard error).
    pub per_class: Vec<(f64, f64)>,
    /// Count-weighted mean accuracy over the listed classes.
    pub mean: f64,
    pub method: AccuracyMethod,
}

/// Labels of a multi-class decision pipeline, as needed by the accuracy
/// predictor.
pub enum MulticlassLabels<'a> {
    /// Per-class scalar machines and the per-machine scale divisors.
    OneVsAll {
        scores: &'a [ScoreAssignment],
        scales: &'a DVector<f64>,
    },
    /// A single machine with m outputs.
    OneHot(&'a ScoreAssignment),
}

/// Theoretical correct-classification probabilities for an argmax decision,
/// via the joint Gaussian law of the m outputs. Weighted by within-task class
/// proportions in `mean`.
pub fn predict_accuracy(
    gen: &GeneralStats,
    labels: &MulticlassLabels,
    task: usize,
    mc: &McConfig,
) -> Result<AccuracyReport> {
    let props = &gen.props;
    let m = props.m();
    let (stack, scales) = match labels {
        MulticlassLabels::OneVsAll { scores, scales } => {
            if scores.len() != m {
                return Err(Error::DimensionMismatch("one machine per class required".into()));
            }
            let mut s = DMatrix::zeros(props.k() * m, m);
            for (ell, sc) in scores.iter().enumerate() {
                s.set_column(ell, &sc.matrix().column(0).into_owned());
            }
            (s, (*scales).clone())
        }
        MulticlassLabels::OneHot(sc) => (sc.matrix(), DVector::from_element(m, 1.0)),
    };
    let (means, covs) = gen.law(&ScoreAssignment::Vector(stack))?;
    let mut per_class = Vec::with_capacity(m);
    let mut method = AccuracyMethod::ClosedForm1d;
    for j in 0..m {
        let a = m * task + j;
        let mut mu = means.row(a).transpose();
        let mut c = covs[a].clone();
        for r in 0..m {
            mu[r] /= scales[r];
            for s in 0..m {
                c[(r, s)] /= scales[r] * scales[s];
            }
        }
        let e = diff_transform(m, j);
        let mu_d = &e * mu;
        let c_d = &e * c * e.transpose();
        if m == 2 {
            // one-dimensional orthant: exact Q-function
            let p = q_func(-mu_d[0] / c_d[(0, 0)].max(0.0).sqrt());
            per_class.push((p, 0.0));
        } else {
            method = AccuracyMethod::McOrthant;
            let mut cfg = *mc;
            cfg.seed = mc.seed.wrapping_add((task * m + j) as u64);
            per_class.push(orthant_probability(&mu_d, &c_d, &cfg)?);
        }
    }
    let n_i = props.n_i(task) as f64;
    let mean = (0..m)
        .map(|j| per_class[j].0 * props.counts[task][j] as f64 / n_i)
        .sum();
    Ok(AccuracyReport {
        per_class,
        mean,
        method,
    })
}

/// The pairwise-vote pipeline has no closed-form accuracy; reports are
/// empirical only.
pub fn one_vs_one_report(per_class: Vec<(f64, f64)>, props: &ClassProportions, task: usize) -> AccuracyReport {
    let n_i = props.n_i(task) as f64;
    let mean = per_class
        .iter()
        .enumerate()
        .map(|(j, v)| v.0 * props.counts[task][j] as f64 / n_i)
        .sum();
    AccuracyReport {
        per_class,
        mean,
        method: AccuracyMethod::EmpiricalOnly,
    }
}

// ---------------------------------------------------------------------------
// ROC construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RocPoint {
    pub eta: f64,
    pub threshold: f64,
    pub theoretical_detection: f64,
    pub labels: ScoreAssignment,
}

/// Theoretical ROC: for each exceedance rate eta, re-optimize the scores for
/// the fixed-rate objective, place the threshold, and record the predicted
/// detection rate.
pub fn roc_curve(
    gen: &GeneralStats,
    task: usize,
    etas: &[f64],
    labels: LabelMode,
) -> Result<Vec<RocPoint>> {
    let mut sorted: Vec<f64> = etas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(sorted.len());
    for &eta in &sorted {
        let scores = match labels {
            LabelMode::Classical => ScoreAssignment::classical_binary(gen.props.k()),
            LabelMode::Optimized => {
                crate::labels::optimal_labels_neyman_pearson(gen, task, eta)?.scores
            }
        };
        let pred = predict_general(gen, &scores)?;
        let zeta = crate::labels::np_threshold(&pred, task, eta);
        let det = crate::labels::np_detection(&pred, task, zeta);
        out.push(RocPoint {
            eta,
            threshold: zeta,
            theoretical_detection: det,
            labels: scores,
        });
    }
    Ok(out)
}

/// Wilson score interval for an empirical rate.
pub fn wilson_interval(hits: usize, total: usize, z: f64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let n = total as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * ((p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt());
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthant_matches_q_function_in_1d() {
        let mean = DVector::from_vec(vec![0.7]);
        let cov = DMatrix::from_element(1, 1, 2.25);
        let cfg = McConfig {
            samples: 400_000,
            seed: 3,
        };
        let (p, se) = orthant_probability(&mean, &cov, &cfg).unwrap();
        let exact = q_func(-0.7 / 1.5);
        assert!((p - exact).abs() < 3.0 * se.max(1e-4), "{p} vs {exact}");
    }

    #[test]
    fn orthant_factorizes_for_diagonal_covariance() {
        let mean = DVector::from_vec(vec![0.3, -0.2, 1.1]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.49, 4.0]));
        let cfg = McConfig {
            samples: 600_000,
            seed: 9,
        };
        let (p, se) = orthant_probability(&mean, &cov, &cfg).unwrap();
        let exact: f64 = [
            q_func(-0.3 / 1.0),
            q_func(0.2 / 0.7),
            q_func(-1.1 / 2.0),
        ]
        .iter()
        .product();
        assert!((p - exact).abs() < 3.5 * se.max(1e-4), "{p} vs {exact}");
    }

    #[test]
    fn orthant_matches_quadrature_in_2d() {
        // correlated 2-D case versus a fine-grid quadrature oracle
        let mean = DVector::from_vec(vec![0.4, -0.1]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let cfg = McConfig {
            samples: 2_000_000,
            seed: 17,
        };
        let (p, _) = orthant_probability(&mean, &cov, &cfg).unwrap();
        // quadrature: integrate P(x2 > 0 | x1) phi(x1) over x1 > 0 region
        // using the conditional normal of x2 given x1.
        let (s1, rho) = (1.0f64, 0.6f64);
        let cond_sd = (1.0 - rho * rho).sqrt();
        let n = 20_000;
        let (lo, hi) = (-8.0f64, 8.0f64);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            if mean[0] + s1 * x <= 0.0 {
                continue;
            }
            let cond_mean = mean[1] + rho * (s1 * x) / s1;
            let tail = q_func(-cond_mean / cond_sd);
            acc += crate::linalg::norm_pdf(x) * tail * h;
        }
        assert!((p - acc).abs() < 1e-3, "{p} vs {acc}");
    }

    #[test]
    fn wilson_interval_contains_rate() {
        let (lo, hi) = wilson_interval(50, 1000, 1.96);
        assert!(lo < 0.05 && 0.05 < hi);
        assert!(hi - lo < 0.03);
    }
}
