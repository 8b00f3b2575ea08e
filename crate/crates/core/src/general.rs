//! The general asymptotic engine: arbitrary class count and per-class
//! covariances. Identity and scalar covariance models run through a reduced
//! k x k representation of all resolvent quantities; dense sample-covariance
//! models materialize kp x kp matrices (capped).
//!
//! Mean vectors enter only through the core matrix and the variance kernels;
//! all trace quantities are computed from the covariance parts alone, which
//! keeps this path an exact extension of the isotropic one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ClassProportions, Hyperparams, ScoreAssignment};
use crate::prediction::ScorePrediction;
use crate::stats::{CovModel, StatSource, SufficientStats};

pub const DELTA_TOL_GENERAL: f64 = 1e-9;
pub const DENSE_LIMIT_DEFAULT: usize = 4096;

/// Resolvent factor: the k x k reduced form when covariances are (scalar
/// multiples of) the identity, or the dense kp x kp inverse otherwise.
#[derive(Debug, Clone)]
pub enum ResolventFactor {
    Reduced(DMatrix<f64>),
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct GeneralStats {
    pub props: ClassProportions,
    /// Per-(task,class) load factors, length mk.
    pub delta_mk: DVector<f64>,
    /// Trace terms (1/kp) tr(S_ij Q0) at the fixed point, length mk.
    pub dtilde: DVector<f64>,
    /// Factorized mean-free resolvent.
    pub q0_factor: ResolventFactor,
    /// mk x mk contracted mean Gram through the resolvent.
    pub mm_gram: DMatrix<f64>,
    /// mk x mk core matrix.
    pub gamma_mat: DMatrix<f64>,
    /// mk x mk fluctuation coefficients (row = test class, col = source).
    pub kappa: DMatrix<f64>,
    /// Linear-response trace matrices (equal when means are excluded from
    /// traces, but both are kept for inspection).
    pub t_bar: DMatrix<f64>,
    pub t_cal: DMatrix<f64>,
    /// Per flat (task,class) variance kernels, mk x mk.
    pub v_mats: Vec<DMatrix<f64>>,
    pub source: StatSource,
}

struct ReducedModel {
    /// Scalar covariance factor per flat index.
    alpha: Vec<f64>,
    /// Centered-mean Gram, mk x mk.
    gram: DMatrix<f64>,
    ginv: DMatrix<f64>,
}

/// Solve the load-factor fixed point and assemble every deterministic
/// quantity of the general theory.
pub fn solve_delta_general(
    stats: &SufficientStats,
    hyper: &Hyperparams,
    dense_limit: usize,
) -> Result<GeneralStats> {
    let props = &stats.props;
    let (k, m) = (props.k(), props.m());
    if hyper.gamma.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "gamma has {} entries for {k} tasks",
            hyper.gamma.len()
        )));
    }
    if stats.cov.is_reduced() {
        solve_reduced(stats, hyper)
    } else {
        let kp = k * props.p;
        if kp > dense_limit {
            return Err(Error::DenseLimitExceeded {
                kp,
                limit: dense_limit,
            });
        }
        solve_dense(stats, hyper)
    }?
    .validate(k * m)
}

impl GeneralStats {
    fn validate(self, mk: usize) -> Result<Self> {
        if self.delta_mk.len() != mk {
            return Err(Error::DimensionMismatch("load factor length".into()));
        }
        if self.delta_mk.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NonPositive("load factors".into()));
        }
        Ok(self)
    }
}

fn solve_reduced(stats: &SufficientStats, hyper: &Hyperparams) -> Result<GeneralStats> {
    let props = &stats.props;
    let (k, m, p) = (props.k(), props.m(), props.p);
    let mk = k * m;
    let kp = (k * p) as f64;
    let alpha: Vec<f64> = (0..mk)
        .map(|a| stats.cov.scalar(a / m, a % m).expect("reduced model"))
        .collect();
    let ginv = hyper
        .coupling()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("coupling matrix".into()))?;
    let model = ReducedModel {
        alpha,
        gram: stats.gram.clone(),
        ginv,
    };

    // Damped Picard on delta_a = n_a / (kp (1 + dtilde_a)) with
    // dtilde_a = (alpha_a / k) [ (D_w + G^{-1})^{-1} ]_{ii},  w_i = sum_j delta_ij alpha_ij.
    let counts: Vec<f64> = (0..mk).map(|a| props.counts[a / m][a % m] as f64).collect();
    let mut delta = DVector::from_fn(mk, |a, _| counts[a] / (2.0 * kp));
    let mut theta = crate::isotropic::DELTA_DAMPING;
    'restart: for _attempt in 0..4 {
        let mut iters = 0;
        loop {
            let w2 = reduced_w2(&model, props, &delta)?;
            let f = DVector::from_fn(mk, |a, _| {
                let dt = model.alpha[a] / k as f64 * w2[(a / m, a / m)];
                counts[a] / (kp * (1.0 + dt))
            });
            let resid = (&f - &delta).amax();
            let next = &delta * (1.0 - theta) + &f * theta;
            if next.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                theta *= 0.5;
                delta = DVector::from_fn(mk, |a, _| counts[a] / (2.0 * kp));
                continue 'restart;
            }
            delta = next;
            if resid < DELTA_TOL_GENERAL {
                break;
            }
            iters += 1;
            if iters > crate::isotropic::DELTA_MAX_ITERS {
                return Err(Error::NoConvergence(
                    "general load-factor iteration exceeded budget".into(),
                ));
            }
        }
        break;
    }
    let w2 = reduced_w2(&model, props, &delta)?;
    let dtilde =
        DVector::from_fn(mk, |a, _| model.alpha[a] / k as f64 * w2[(a / m, a / m)]);

    // Core matrix from the contracted mean Gram.
    let dh = delta.map(|v| v.sqrt());
    let mm_gram = DMatrix::from_fn(mk, mk, |a, b| {
        dh[a] * dh[b] * w2[(a / m, b / m)] * model.gram[(a, b)]
    });
    let gamma_mat = (DMatrix::identity(mk, mk) + &mm_gram)
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("core matrix".into()))?;

    // Trace matrices and the linear-response solve.
    let theta_tr = DMatrix::from_fn(mk, mk, |a, b| {
        model.alpha[a] * model.alpha[b] / k as f64 * w2[(a / m, b / m)].powi(2)
    });
    let (kappa, t_mat) = kappa_from_traces(props, &delta, &dtilde, &theta_tr)?;

    // Variance kernels: per source flat index b, the contracted kernel
    // K^(b)_{ac} = alpha_b sqrt(delta_a delta_c) W2[i_a, i_b] W2[i_b, i_c] gram_{ac}.
    let kernel = |b: usize| -> DMatrix<f64> {
        let ib = b / m;
        DMatrix::from_fn(mk, mk, |a, c| {
            model.alpha[b]
                * dh[a]
                * dh[c]
                * w2[(a / m, ib)]
                * w2[(ib, c / m)]
                * model.gram[(a, c)]
        })
    };
    let task_kernels: Vec<DMatrix<f64>> = (0..mk).map(kernel).collect();
    let mut v_mats = Vec::with_capacity(mk);
    for a in 0..mk {
        let mut v = DMatrix::from_diagonal(&kappa.row(a).transpose());
        v += &task_kernels[a];
        for b in 0..mk {
            v += &task_kernels[b] * (delta[b] * kappa[(a, b)]);
        }
        v_mats.push(v);
    }
    Ok(GeneralStats {
        props: props.clone(),
        delta_mk: delta,
        dtilde,
        q0_factor: ResolventFactor::Reduced(w2),
        mm_gram,
        gamma_mat,
        kappa,
        t_bar: t_mat.clone(),
        t_cal: t_mat,
        v_mats,
        source: stats.source.clone(),
    })
}

/// (D_w + G^{-1})^{-1} for the reduced model.
fn reduced_w2(
    model: &ReducedModel,
    props: &ClassProportions,
    delta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (k, m) = (props.k(), props.m());
    let mut inner = model.ginv.clone();
    for i in 0..k {
        let w: f64 = (0..m).map(|j| delta[m * i + j] * model.alpha[m * i + j]).sum();
        inner[(i, i)] += w;
    }
    inner
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("reduced resolvent".into()))
}

/// Solve the linear-response system for the fluctuation coefficients:
/// t = Theta (I - D Theta)^{-1}, kappa_{a,b} = t_{a,b} / (1 + dtilde_b).
fn kappa_from_traces(
    props: &ClassProportions,
    delta: &DVector<f64>,
    dtilde: &DVector<f64>,
    theta_tr: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = props.m();
    let mk = theta_tr.nrows();
    let kp = (props.k() * props.p) as f64;
    let d = DVector::from_fn(mk, |a, _| {
        let n_a = props.counts[a / m][a % m] as f64;
        n_a / (kp * (1.0 + dtilde[a]).powi(2))
    });
    let _ = delta;
    let sys = DMatrix::identity(mk, mk) - DMatrix::from_diagonal(&d) * theta_tr;
    let sys_inv = sys
        .try_inverse()
        .ok_or_else(|| Error::CriticalRegime("I - D T singular".into()))?;
    let t = theta_tr * sys_inv;
    let kappa = DMatrix::from_fn(mk, mk, |a, b| t[(a, b)] / (1.0 + dtilde[b]));
    Ok((kappa, t))
}

fn solve_dense(stats: &SufficientStats, hyper: &Hyperparams) -> Result<GeneralStats> {
    let props = &stats.props;
    let (k, m, p) = (props.k(), props.m(), props.p);
    let (mk, kp) = (k * m, k * p);
    let kpf = kp as f64;
    let means = stats
        .means
        .as_ref()
        .ok_or_else(|| Error::ModelMismatch("dense path needs mean vectors".into()))?;
    let covs = match &stats.cov {
        CovModel::Sample(c) => c,
        _ => unreachable!("dense path only for sample covariances"),
    };
    let gh = hyper.coupling_sqrt();

    // S_a = A^{1/2} (e_i e_i^T (x) Sigma_a) A^{1/2}: block (r,s) is
    // gh[r,i] gh[i,s] Sigma_a.
    let smat = |a: usize| -> DMatrix<f64> {
        let (i, j) = (a / m, a % m);
        let mut out = DMatrix::zeros(kp, kp);
        for r in 0..k {
            for s in 0..k {
                let w = gh[(r, i)] * gh[(i, s)];
                if w != 0.0 {
                    out.view_mut((r * p, s * p), (p, p))
                        .zip_apply(&covs[i][j], |o, v| *o += w * v);
                }
            }
        }
        out
    };
    let smats: Vec<DMatrix<f64>> = (0..mk).map(smat).collect();
    let counts: Vec<f64> = (0..mk).map(|a| props.counts[a / m][a % m] as f64).collect();

    let q0_of = |delta: &DVector<f64>| -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::identity(kp, kp);
        for a in 0..mk {
            acc.zip_apply(&smats[a], |o, v| *o += delta[a] * v);
        }
        acc.try_inverse()
            .ok_or_else(|| Error::SingularMatrix("dense resolvent".into()))
    };

    let mut delta = DVector::from_fn(mk, |a, _| counts[a] / (2.0 * kpf));
    let mut q0 = q0_of(&delta)?;
    let mut iters = 0;
    loop {
        let f = DVector::from_fn(mk, |a, _| {
            let dt = (&smats[a] * &q0).trace() / kpf;
            counts[a] / (kpf * (1.0 + dt))
        });
        let resid = (&f - &delta).amax();
        delta = &delta * (1.0 - crate::isotropic::DELTA_DAMPING)
            + &f * crate::isotropic::DELTA_DAMPING;
        if delta.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositive("dense load factors".into()));
        }
        q0 = q0_of(&delta)?;
        if resid < DELTA_TOL_GENERAL {
            break;
        }
        iters += 1;
        if iters > crate::isotropic::DELTA_MAX_ITERS {
            return Err(Error::NoConvergence(
                "dense load-factor iteration exceeded budget".into(),
            ));
        }
    }
    let sq0: Vec<DMatrix<f64>> = smats.iter().map(|s| s * &q0).collect();
    let dtilde = DVector::from_fn(mk, |a, _| sq0[a].trace() / kpf);

    // Columns of the contracted mean matrix: sqrt(delta_a) A^{1/2}(e_i (x) mean_a).
    let mut mcols = DMatrix::zeros(kp, mk);
    for a in 0..mk {
        let (i, j) = (a / m, a % m);
        let w = delta[a].sqrt();
        for r in 0..k {
            if gh[(r, i)] != 0.0 {
                let mut seg = mcols.view_mut((r * p, a), (p, 1));
                seg.zip_apply(&means[i][j], |o, v| *o += w * gh[(r, i)] * v);
            }
        }
    }
    let q0m = &q0 * &mcols;
    let mm_gram = mcols.transpose() * &q0m;
    let gamma_mat = (DMatrix::identity(mk, mk) + &mm_gram)
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("core matrix".into()))?;

    let mut theta_tr = DMatrix::zeros(mk, mk);
    for a in 0..mk {
        for b in a..mk {
            let v = sq0[a].iter().zip(sq0[b].transpose().iter()).map(|(x, y)| x * y).sum::<f64>()
                / kpf;
            theta_tr[(a, b)] = v;
            theta_tr[(b, a)] = v;
        }
    }
    let (kappa, t_mat) = kappa_from_traces(props, &delta, &dtilde, &theta_tr)?;

    let task_kernels: Vec<DMatrix<f64>> = (0..mk)
        .map(|b| q0m.transpose() * &smats[b] * &q0m)
        .collect();
    let mut v_mats = Vec::with_capacity(mk);
    for a in 0..mk {
        let mut v = DMatrix::from_diagonal(&kappa.row(a).transpose());
        v += &task_kernels[a];
        for b in 0..mk {
            v += &task_kernels[b] * (delta[b] * kappa[(a, b)]);
        }
        v_mats.push(v);
    }
    Ok(GeneralStats {
        props: props.clone(),
        delta_mk: delta,
        dtilde,
        q0_factor: ResolventFactor::Dense(q0),
        mm_gram,
        gamma_mat,
        kappa,
        t_bar: t_mat.clone(),
        t_cal: t_mat,
        v_mats,
        source: stats.source.clone(),
    })
}

impl GeneralStats {
    /// Predicted means (mk x q) and covariances (per flat index, q x q) for a
    /// score assignment.
    pub fn law(&self, scores: &ScoreAssignment) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        scores.check_shape(&self.props)?;
        let y = scores.matrix();
        let yc = self.props.center_scores(&y);
        let mk = self.delta_mk.len();
        let dh = self.delta_mk.map(|v| v.sqrt());
        let mut ynorm = yc.clone();
        for r in 0..mk {
            for c in 0..y.ncols() {
                ynorm[(r, c)] *= dh[r];
            }
        }
        let gy = &self.gamma_mat * &ynorm;
        let mut means = y.clone();
        for r in 0..mk {
            for c in 0..y.ncols() {
                means[(r, c)] -= gy[(r, c)] / dh[r];
            }
        }
        let covs = (0..mk)
            .map(|a| {
                let c = gy.transpose() * &self.v_mats[a] * &gy;
                (c.clone() + c.transpose()) * 0.5
            })
            .collect();
        Ok((means, covs))
    }
}

/// Predicted Gaussian law of the score vector for every (task, class).
pub fn predict_general(gen: &GeneralStats, scores: &ScoreAssignment) -> Result<ScorePrediction> {
    let (means, covs) = gen.law(scores)?;
    for c in &covs {
        let eig = c.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&v| v < -1e-9) {
            return Err(Error::NonPsd(format!(
                "predicted covariance eigenvalue {:.3e}",
                eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min)
            )));
        }
    }
    Ok(ScorePrediction {
        props: gen.props.clone(),
        means,
        covs,
        iso_variance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isotropic::{build_isotropic_stats, predict_binary_isotropic};
    use crate::stats::SufficientStats;
    use approx::assert_abs_diff_eq;

    fn toy_stats(beta: f64, cov: CovModel) -> SufficientStats {
        let props = ClassProportions::new(60, vec![vec![50, 70], vec![20, 40]]).unwrap();
        let p = 60;
        let mut mu1 = DVector::zeros(p);
        mu1[0] = 1.3;
        let mut mu1p = DVector::zeros(p);
        mu1p[1] = 1.3;
        let mu2 = &mu1 * beta + &mu1p * (1.0 - beta * beta).max(0.0).sqrt();
        let means = vec![vec![mu1.clone(), -mu1], vec![mu2.clone(), -mu2]];
        SufficientStats::from_known_means(props, &means, cov).unwrap()
    }

    #[test]
    fn identity_covariance_reduces_to_isotropic_path() {
        let stats = toy_stats(0.4, CovModel::Identity);
        let hp = Hyperparams::new(1.7, vec![0.9, 1.4]).unwrap();
        let gen = solve_delta_general(&stats, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let iso = build_isotropic_stats(&stats, &hp).unwrap();
        // load factors agree
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(
                    gen.delta_mk[2 * i + j],
                    iso.delta_2k[2 * i + j],
                    epsilon = 1e-9
                );
            }
        }
        // core matrices agree
        assert!((&gen.gamma_mat - &iso.gamma_mat).abs().max() < 1e-8);
        // predictions agree
        let y = ScoreAssignment::classical_binary(2);
        let pg = predict_general(&gen, &y).unwrap();
        let pi = predict_binary_isotropic(&iso, &y).unwrap();
        assert!((&pg.means - &pi.means).abs().max() < 1e-8);
        for a in 0..4 {
            assert_abs_diff_eq!(pg.covs[a][(0, 0)], pi.covs[a][(0, 0)], epsilon = 1e-8);
        }
    }

    #[test]
    fn dense_sample_path_matches_reduced_on_scalar_covariances() {
        // Feed the dense machinery scalar covariances disguised as dense
        // matrices; it must agree with the reduced path.
        let stats_red = toy_stats(0.6, CovModel::Isotropic(vec![vec![1.5, 0.8], vec![1.1, 1.0]]));
        let p = stats_red.props.p;
        let dense_cov = CovModel::Sample(
            (0..2)
                .map(|i| {
                    (0..2)
                        .map(|j| {
                            DMatrix::identity(p, p)
                                * stats_red.cov.scalar(i, j).unwrap()
                        })
                        .collect()
                })
                .collect(),
        );
        let mut stats_dense = stats_red.clone();
        stats_dense.cov = dense_cov;
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let g1 = solve_delta_general(&stats_red, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let g2 = solve_delta_general(&stats_dense, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        assert!((&g1.delta_mk - &g2.delta_mk).abs().max() < 1e-8);
        assert!((&g1.gamma_mat - &g2.gamma_mat).abs().max() < 1e-7);
        let y = ScoreAssignment::classical_binary(2);
        let p1 = predict_general(&g1, &y).unwrap();
        let p2 = predict_general(&g2, &y).unwrap();
        assert!((&p1.means - &p2.means).abs().max() < 1e-7);
        for a in 0..4 {
            assert_abs_diff_eq!(p1.covs[a][(0, 0)], p2.covs[a][(0, 0)], epsilon = 1e-7);
        }
    }

    #[test]
    fn uniform_covariance_scale_absorbs_into_hyperparams() {
        // Data scaled by sqrt(2) (Sigma = 2I) is the same problem as Sigma = I
        // with means / sqrt(2) and coupling doubled.
        let props = ClassProportions::new(60, vec![vec![50, 70], vec![20, 40]]).unwrap();
        let p = 60;
        let mut mu1 = DVector::zeros(p);
        mu1[0] = 1.3;
        let mut mu2 = DVector::zeros(p);
        mu2[0] = 0.5;
        mu2[1] = 1.1;
        let means = vec![vec![mu1.clone(), -mu1.clone()], vec![mu2.clone(), -mu2.clone()]];
        let stats2 = SufficientStats::from_known_means(
            props.clone(),
            &means,
            CovModel::Isotropic(vec![vec![2.0, 2.0], vec![2.0, 2.0]]),
        )
        .unwrap();
        let s = std::f64::consts::SQRT_2;
        let means_scaled: Vec<Vec<DVector<f64>>> = means
            .iter()
            .map(|t| t.iter().map(|mu| mu / s).collect())
            .collect();
        let stats1 =
            SufficientStats::from_known_means(props, &means_scaled, CovModel::Identity).unwrap();
        let hp = Hyperparams::new(0.8, vec![1.0, 1.3]).unwrap();
        let hp2 = Hyperparams::new(1.6, vec![2.0, 2.6]).unwrap();
        let ga = solve_delta_general(&stats2, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let gb = solve_delta_general(&stats1, &hp2, DENSE_LIMIT_DEFAULT).unwrap();
        assert!((&ga.delta_mk - &gb.delta_mk).abs().max() < 1e-9);
        let y = ScoreAssignment::classical_binary(2);
        let pa = predict_general(&ga, &y).unwrap();
        let pb = predict_general(&gb, &y).unwrap();
        assert!((&pa.means - &pb.means).abs().max() < 1e-8);
        for a in 0..4 {
            assert_abs_diff_eq!(pa.covs[a][(0, 0)], pb.covs[a][(0, 0)], epsilon = 1e-8);
        }
    }

    #[test]
    fn dense_limit_enforced() {
        let stats = toy_stats(0.2, CovModel::Sample(vec![
            vec![DMatrix::identity(60, 60), DMatrix::identity(60, 60)],
            vec![DMatrix::identity(60, 60), DMatrix::identity(60, 60)],
        ]));
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        match solve_delta_general(&stats, &hp, 100) {
            Err(Error::DenseLimitExceeded { kp, limit }) => {
                assert_eq!(kp, 120);
                assert_eq!(limit, 100);
            }
            other => panic!("expected dense limit error, got {other:?}"),
        }
    }

    #[test]
    fn predicted_covariances_are_psd() {
        let stats = toy_stats(0.5, CovModel::Identity);
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let gen = solve_delta_general(&stats, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let y = ScoreAssignment::one_hot(2, 2);
        let pred = predict_general(&gen, &y).unwrap();
        for c in &pred.covs {
            let eig = c.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-9));
        }
    }
}
