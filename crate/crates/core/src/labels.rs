//! Input-score (label) optimization, decision thresholds, zero-shift
//! recentering and hyperparameter tuning: every tuning layer built on top of
//! the predicted score laws.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::general::GeneralStats;
use crate::isotropic::IsotropicStats;
use crate::linalg::{self, norm_pdf, q_func, q_inv};
use crate::model::{ClassProportions, Hyperparams, ScoreAssignment};
use crate::prediction::ScorePrediction;
use crate::stats::SufficientStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    GradientDescent,
    GradientAscentMc,
}

#[derive(Debug, Clone)]
pub struct OptimizedLabels {
    pub scores: ScoreAssignment,
    /// Achieved criterion value (predicted error, detection rate or accuracy,
    /// depending on the producing operation).
    pub objective: f64,
    /// Additive per-task constant applied to the target task's entries.
    pub shift: f64,
    pub provenance: Provenance,
    pub grad_norm: Option<f64>,
    pub converged: bool,
    /// Set when a near-singular kernel forced a least-squares pseudo-solve.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub enum DecisionRule {
    /// Binary: decide class 1 when the score exceeds the per-task threshold.
    Threshold {
        zeta: DVector<f64>,
        predicted_error: DVector<f64>,
    },
    /// Multi-class: largest raw output wins.
    Argmax,
    /// Multi-class: outputs divided per (task, classifier) before the argmax.
    ArgmaxScaled { scales: DMatrix<f64> },
}

const KERNEL_COND_LIMIT: f64 = 1e12;

// ---------------------------------------------------------------------------
// Closed-form binary optimizers
// ---------------------------------------------------------------------------

/// Optimal binary scores for one task under identity covariances, with the
/// optimal predicted error attached. Canonical representative: unit Euclidean
/// norm, positive class-1 entry for the target task.
pub fn optimal_labels_isotropic(iso: &IsotropicStats, task: usize) -> Result<OptimizedLabels> {
    let k = iso.k();
    if task >= k {
        return Err(Error::DimensionMismatch("task out of range".into()));
    }
    let h = hadamard(&iso.a_mat, &iso.m_mat);
    let dh = iso.delta_2k.map(|v| v.sqrt());
    let mut u = DVector::zeros(2 * k);
    u[2 * task] = 1.0 / dh[2 * task];
    u[2 * task + 1] = -1.0 / dh[2 * task + 1];
    let hu = &h * &u;
    let (w, flagged) = solve_kernel(&iso.v_mats[task], &hu);
    // y* = Gamma^{-1} w = (I + H) w in normalized coordinates.
    let ynorm = &w + &h * &w;
    let mut y = ynorm.component_div(&dh);
    canonicalize(&mut y, 2 * task);
    let opt_sq = iso.delta_k[task] * hu.dot(&w);
    let objective = q_func(0.5 * opt_sq.max(0.0).sqrt());
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Binary(y),
        objective,
        shift: 0.0,
        provenance: Provenance::ClosedForm,
        grad_norm: None,
        converged: true,
        flagged,
    })
}

fn hadamard(t: &DMatrix<f64>, m2k: &DMatrix<f64>) -> DMatrix<f64> {
    let k = t.nrows();
    DMatrix::from_fn(2 * k, 2 * k, |r, c| t[(r / 2, c / 2)] * m2k[(r, c)])
}

fn solve_kernel(v: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    if linalg::sym_cond(v) <= KERNEL_COND_LIMIT {
        if let Ok(sol) = linalg::spd_solve(v, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), KERNEL_COND_LIMIT) {
            return (sol.column(0).into_owned(), false);
        }
    }
    (linalg::sym_pseudo_solve(v, rhs, 1e-12), true)
}

fn canonicalize(y: &mut DVector<f64>, positive_entry: usize) {
    let n = y.norm();
    if n > 0.0 {
        *y /= n;
    }
    if y[positive_entry] < 0.0 {
        *y = -y.clone();
    }
}

// ---------------------------------------------------------------------------
// General binary optimizer (gradient descent on the exact error)
// ---------------------------------------------------------------------------

/// Mean/covariance operators of the binary law as explicit small matrices,
/// shared by the closed-form and descent paths.
struct BinaryLaw<'a> {
    gen: &'a GeneralStats,
    task: usize,
}

impl<'a> BinaryLaw<'a> {
    fn props(&self) -> &ClassProportions {
        &self.gen.props
    }

    fn m(&self) -> usize {
        self.props().m()
    }

    /// Gradient of the predicted mean at flat index `a` with respect to y.
    fn mean_grad(&self, a: usize) -> DVector<f64> {
        let mk = self.gen.delta_mk.len();
        let dh = self.gen.delta_mk.map(|v| v.sqrt());
        // m_a = y_a - e_a^T D^{-1/2} Gamma D^{1/2} C y
        let mut back = DVector::zeros(mk);
        for r in 0..mk {
            back[r] = self.gen.gamma_mat[(a, r)] * dh[r] / dh[a];
        }
        let mut grad = -self.center_transpose(&back);
        grad[a] += 1.0;
        grad
    }

    fn mean_value(&self, a: usize, y: &DVector<f64>) -> f64 {
        self.mean_grad(a).dot(y)
    }

    /// C_a(y) = y^T K_a y together with K_a y for the gradient.
    fn cov_value_grad(&self, a: usize, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let dh = self.gen.delta_mk.map(|v| v.sqrt());
        let yc = self.center(y);
        let z = dh.component_mul(&yc);
        let gz = &self.gen.gamma_mat * &z;
        let vg = &self.gen.v_mats[a] * &gz;
        let val = gz.dot(&vg);
        let back = &self.gen.gamma_mat * vg;
        let grad = self.center_transpose(&dh.component_mul(&back)) * 2.0;
        (val, grad)
    }

    fn center(&self, y: &DVector<f64>) -> DVector<f64> {
        let props = self.props();
        props
            .center_scores(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()))
            .column(0)
            .into_owned()
    }

    /// Transpose of the per-task weighted centering operator.
    fn center_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        let props = self.props();
        let m = self.m();
        let mut out = v.clone();
        for i in 0..props.k() {
            let n_i = props.n_i(i) as f64;
            let s: f64 = (0..m).map(|j| v[m * i + j]).sum();
            for j in 0..m {
                out[m * i + j] -= props.counts[i][j] as f64 / n_i * s;
            }
        }
        out
    }

    fn flat(&self, j: usize) -> usize {
        self.m() * self.task + j
    }
}

/// Closed-form initializer: the identity-covariance optimum computed with the
/// general-path matrices (class-1 variance kernel).
fn general_closed_form(gen: &GeneralStats, task: usize) -> Result<DVector<f64>> {
    let mk = gen.delta_mk.len();
    let m = gen.props.m();
    let dh = gen.delta_mk.map(|v| v.sqrt());
    let mut u = DVector::zeros(mk);
    u[m * task] = 1.0 / dh[m * task];
    u[m * task + 1] = -1.0 / dh[m * task + 1];
    let hu = &gen.mm_gram * &u;
    let (w, _) = solve_kernel(&gen.v_mats[m * task], &hu);
    let ynorm = &w + &gen.mm_gram * &w;
    let mut y = ynorm.component_div(&dh);
    canonicalize(&mut y, m * task);
    Ok(y)
}

/// Binary classification error at the optimal threshold for (possibly)
/// unequal class variances. Returns (error, threshold).
pub fn binary_error_at_optimal_threshold(
    m1: f64,
    m2: f64,
    c1: f64,
    c2: f64,
) -> (f64, f64) {
    let (s1, s2) = (c1.sqrt(), c2.sqrt());
    // Optimal threshold equates the two class densities; with unequal
    // variances this is a quadratic in zeta.
    let zeta = if (c1 - c2).abs() < 1e-12 * c1.max(c2) {
        0.5 * (m1 + m2)
    } else {
        let a = 1.0 / (2.0 * c2) - 1.0 / (2.0 * c1);
        let b = m1 / c1 - m2 / c2;
        let c = m2 * m2 / (2.0 * c2) - m1 * m1 / (2.0 * c1) + (s2 / s1).ln();
        let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
        let z1 = (-b + disc) / (2.0 * a);
        let z2 = (-b - disc) / (2.0 * a);
        // pick the root separating the means when possible
        let lo = m1.min(m2);
        let hi = m1.max(m2);
        if z1 >= lo && z1 <= hi {
            z1
        } else if z2 >= lo && z2 <= hi {
            z2
        } else {
            0.5 * (m1 + m2)
        }
    };
    // error of deciding class 1 above the threshold; can exceed 1/2 when the
    // labels invert the class means
    let err = 0.5 * q_func((m1 - zeta) / s1) + 0.5 * q_func((zeta - m2) / s2);
    (err, zeta)
}

/// Optimal binary scores for generic covariances: closed form when the two
/// class variances coincide, gradient descent on the exact two-variance error
/// otherwise.
pub fn optimal_labels_general(gen: &GeneralStats, task: usize) -> Result<OptimizedLabels> {
    if gen.props.m() != 2 {
        return Err(Error::ModelMismatch(
            "binary optimizer requires m = 2 statistics".into(),
        ));
    }
    let law = BinaryLaw { gen, task };
    let y0 = general_closed_form(gen, task)?;
    let (a1, a2) = (law.flat(0), law.flat(1));
    let (c1, _) = law.cov_value_grad(a1, &y0);
    let (c2, _) = law.cov_value_grad(a2, &y0);
    let m1 = law.mean_value(a1, &y0);
    let m2 = law.mean_value(a2, &y0);
    if (c1 - c2).abs() < 1e-8 * c1.max(c2) {
        let (err, _) = binary_error_at_optimal_threshold(m1, m2, c1, c2);
        return Ok(OptimizedLabels {
            scores: ScoreAssignment::Binary(y0),
            objective: err,
            shift: 0.0,
            provenance: Provenance::ClosedForm,
            grad_norm: None,
            converged: true,
            flagged: false,
        });
    }
    let g1 = law.mean_grad(a1);
    let g2 = law.mean_grad(a2);
    let f = |y: &DVector<f64>| -> (f64, DVector<f64>) {
        let m1 = g1.dot(y);
        let m2 = g2.dot(y);
        let (c1, dc1) = law.cov_value_grad(a1, y);
        let (c2, dc2) = law.cov_value_grad(a2, y);
        let (s1, s2) = (c1.sqrt(), c2.sqrt());
        let (err, zeta) = binary_error_at_optimal_threshold(m1, m2, c1, c2);
        // envelope theorem: zeta is optimal, so only the partials through the
        // four statistics remain
        let t1 = (m1 - zeta) / s1;
        let t2 = (zeta - m2) / s2;
        let mut grad = DVector::zeros(y.len());
        grad.axpy(-norm_pdf(t1) / (2.0 * s1), &g1, 1.0);
        grad.axpy(norm_pdf(t2) / (2.0 * s2), &g2, 1.0);
        grad.axpy(norm_pdf(t1) * (m1 - zeta) / (4.0 * c1 * s1), &dc1, 1.0);
        grad.axpy(norm_pdf(t2) * (zeta - m2) / (4.0 * c2 * s2), &dc2, 1.0);
        (err, grad)
    };
    let out = descend(f, y0, 2000, 1e-8);
    let mut y = out.x;
    canonicalize(&mut y, a1);
    // the objective is scale invariant, so canonicalization is free
    let final_obj = f(&y).0;
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Binary(y),
        objective: final_obj,
        shift: 0.0,
        provenance: Provenance::GradientDescent,
        grad_norm: Some(out.grad_norm),
        converged: out.converged,
        flagged: !out.converged,
    })
}

/// Neyman-Pearson scores: fix the class-1 exceedance rate at `eta` and
/// maximize the predicted detection rate of class 2... the threshold is
/// zeta(eta) = m_1 + sqrt(C_1) Q^{-1}(eta) and detection = Q((zeta - m_2)/sqrt(C_2)).
pub fn optimal_labels_neyman_pearson(
    gen: &GeneralStats,
    task: usize,
    eta: f64,
) -> Result<OptimizedLabels> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::ModelMismatch(format!("eta = {eta} outside (0,1)")));
    }
    if gen.props.m() != 2 {
        return Err(Error::ModelMismatch(
            "hypothesis-test optimizer requires m = 2".into(),
        ));
    }
    let law = BinaryLaw { gen, task };
    let (a1, a2) = (law.flat(0), law.flat(1));
    let g1 = law.mean_grad(a1);
    let g2 = law.mean_grad(a2);
    let q = q_inv(eta);
    // minimize s = (m1 - m2 + sqrt(C1) q) / sqrt(C2); detection = Q(s)
    let f = |y: &DVector<f64>| -> (f64, DVector<f64>) {
        let m1 = g1.dot(y);
        let m2 = g2.dot(y);
        let (c1, dc1) = law.cov_value_grad(a1, y);
        let (c2, dc2) = law.cov_value_grad(a2, y);
        let (s1, s2) = (c1.sqrt(), c2.sqrt());
        let s = (m1 - m2 + s1 * q) / s2;
        let mut grad = DVector::zeros(y.len());
        grad.axpy(1.0 / s2, &g1, 1.0);
        grad.axpy(-1.0 / s2, &g2, 1.0);
        grad.axpy(q / (2.0 * s1 * s2), &dc1, 1.0);
        grad.axpy(-s / (2.0 * c2), &dc2, 1.0);
        (s, grad)
    };
    // The detection statistic is sign dependent: the gainful orientation puts
    // the signal class above the threshold. Start from the better-signed
    // initializer and keep the final sign.
    let y0 = general_closed_form(gen, task)?;
    let y0 = if f(&y0).0 <= f(&(-&y0)).0 { y0 } else { -y0 };
    let out = descend(f, y0, 2000, 1e-8);
    let mut y = out.x;
    let n = y.norm();
    if n > 0.0 {
        y /= n;
    }
    let (s_final, _) = f(&y);
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Binary(y),
        objective: q_func(s_final),
        shift: 0.0,
        provenance: Provenance::GradientDescent,
        grad_norm: Some(out.grad_norm),
        converged: out.converged,
        flagged: !out.converged,
    })
}

/// Threshold achieving exceedance rate `eta` for class 1 under a prediction.
pub fn np_threshold(pred: &ScorePrediction, task: usize, eta: f64) -> f64 {
    pred.mean(task, 0, 0) + pred.sigma(task, 0) * q_inv(eta)
}

/// Predicted detection rate of class 2 at a threshold.
pub fn np_detection(pred: &ScorePrediction, task: usize, zeta: f64) -> f64 {
    q_func((zeta - pred.mean(task, 1, 0)) / pred.sigma(task, 1))
}

// ---------------------------------------------------------------------------
// One-vs-all and one-hot optimizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DescentConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub relax: f64,
    pub relax_refine: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-8,
            relax: 20.0,
            relax_refine: 100.0,
        }
    }
}

/// Optimize the scalar scores of the class-`ell` machine: minimize the
/// smoothed maximum over wrong classes of Q((m_il - m_ij)/sqrt(C_ij)),
/// then rescale so the own-class variance is one and shift so the own-class
/// mean is zero.
pub fn optimal_labels_one_vs_all(
    gen: &GeneralStats,
    task: usize,
    ell: usize,
    cfg: &DescentConfig,
) -> Result<OptimizedLabels> {
    let props = &gen.props;
    let (k, m) = (props.k(), props.m());
    if ell >= m || task >= k {
        return Err(Error::DimensionMismatch("class or task out of range".into()));
    }
    let law = BinaryLaw { gen, task };
    let law_ref = &law;
    let grads: Vec<DVector<f64>> = (0..m).map(|j| law.mean_grad(m * task + j)).collect();
    let objective = |relax: f64| {
        let grads = grads.clone();
        move |y: &DVector<f64>| -> (f64, DVector<f64>) {
            let law = law_ref;
            let means: Vec<f64> = grads.iter().map(|g| g.dot(y)).collect();
            let mut qs = Vec::with_capacity(m - 1);
            let mut parts = Vec::with_capacity(m - 1);
            for j in 0..m {
                if j == ell {
                    continue;
                }
                let (cj, dcj) = law.cov_value_grad(m * task + j, y);
                let sj = cj.sqrt();
                let r = (means[ell] - means[j]) / sj;
                qs.push(q_func(r));
                parts.push((j, cj, sj, r, dcj));
            }
            let qmax = qs.iter().cloned().fold(f64::MIN, f64::max);
            let weights: Vec<f64> = qs.iter().map(|&v| (relax * (v - qmax)).exp()).collect();
            let wsum: f64 = weights.iter().sum();
            let nn = (m - 1) as f64;
            // stabilized (1/(relax * n)) ln sum exp(relax * Q_j), up to an
            // additive constant that does not move the argmin
            let fval = qmax + (wsum / nn).ln() / relax;
            let mut grad = DVector::zeros(y.len());
            for (idx, &(j, cj, sj, r, ref dcj)) in parts.iter().enumerate() {
                let w = weights[idx] / wsum;
                // dF/dQ_j = w ; dQ/dr = -phi(r)
                let coeff = -w * norm_pdf(r);
                let mut dr = (&grads[ell] - &grads[j]) / sj;
                dr.axpy(-r / (2.0 * cj), dcj, 1.0);
                grad.axpy(coeff, &dr, 1.0);
            }
            (fval, grad)
        }
    };
    // paper initializer: +1 on class ell of every task, -1 elsewhere
    let mut y0 = DVector::from_element(k * m, -1.0);
    for i in 0..k {
        y0[m * i + ell] = 1.0;
    }
    let pass1 = descend(objective(cfg.relax), y0, cfg.max_iters, cfg.grad_tol);
    let pass2 = descend(
        objective(cfg.relax_refine),
        pass1.x,
        cfg.max_iters,
        cfg.grad_tol,
    );
    let mut y = pass2.x;
    // exact worst-case objective at the optimum
    let worst = {
        let means: Vec<f64> = grads.iter().map(|g| g.dot(&y)).collect();
        (0..m)
            .filter(|&j| j != ell)
            .map(|j| {
                let (cj, _) = law.cov_value_grad(m * task + j, &y);
                q_func((means[ell] - means[j]) / cj.sqrt())
            })
            .fold(f64::MIN, f64::max)
    };
    // scale to unit own-class variance, then shift the target task's entries
    // so the own-class mean is zero
    let (c_own, _) = law.cov_value_grad(m * task + ell, &y);
    if !(c_own > 0.0) {
        return Err(Error::ZeroVariance("own-class predicted variance".into()));
    }
    y /= c_own.sqrt();
    let m_own = grads[ell].dot(&y);
    let shift = -m_own;
    for j in 0..m {
        y[m * task + j] += shift;
    }
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Binary(y),
        objective: worst,
        shift,
        provenance: Provenance::GradientDescent,
        grad_norm: Some(pass2.grad_norm),
        converged: pass2.converged,
        flagged: !pass2.converged,
    })
}

/// Configuration of the Monte-Carlo ascent on the one-hot objective.
#[derive(Debug, Clone)]
pub struct OneHotAscentConfig {
    pub samples: usize,
    pub fd_step: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for OneHotAscentConfig {
    fn default() -> Self {
        Self {
            samples: 200_000,
            fd_step: 1e-3,
            max_steps: 12,
            seed: 0x0ddba11,
        }
    }
}

/// Optimize the full km x m score matrix by gradient ascent on the estimated
/// mean correct-classification probability of one task. The objective is
/// evaluated by Monte Carlo with common random numbers, so it is
/// deterministic for a fixed seed and ascent steps are accepted on exact
/// improvement.
pub fn optimal_labels_one_hot(
    gen: &GeneralStats,
    task: usize,
    cfg: &OneHotAscentConfig,
) -> Result<OptimizedLabels> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let props = &gen.props;
    let (k, m) = (props.k(), props.m());
    if task >= k {
        return Err(Error::DimensionMismatch("task out of range".into()));
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.seed);
    let normal = rand_distr::StandardNormal;
    // common random numbers, one (m-1) x N block shared by all evaluations
    let u = DMatrix::from_fn(m - 1, cfg.samples, |_, _| {
        let v: f64 = normal.sample(&mut rng);
        v
    });

    let accuracy = |y: &DMatrix<f64>| -> Result<f64> {
        let (means, covs) = gen.law(&ScoreAssignment::Vector(y.clone()))?;
        let mut acc = 0.0;
        for j in 0..m {
            let a = m * task + j;
            let mu = means.row(a).transpose();
            let e = diff_transform(m, j);
            let mu_d = &e * mu;
            let c_d = &e * &covs[a] * e.transpose();
            let (_, l) = linalg::psd_factor(&c_d, 1e-6)?;
            let x = &l * &u;
            let mut hits = 0usize;
            for c in 0..cfg.samples {
                if (0..m - 1).all(|r| mu_d[r] + x[(r, c)] > 0.0) {
                    hits += 1;
                }
            }
            acc += hits as f64 / cfg.samples as f64;
        }
        Ok(acc / m as f64)
    };

    let mut y = ScoreAssignment::one_hot(k, m).matrix();
    let mut best = accuracy(&y)?;
    let init = best;
    let dim = k * m * m;
    let mut step = 0.1;
    let mut converged = false;
    for _ in 0..cfg.max_steps {
        // central finite differences with common random numbers
        let mut grad = DMatrix::zeros(k * m, m);
        for idx in 0..dim {
            let (r, c) = (idx % (k * m), idx / (k * m));
            let mut yp = y.clone();
            yp[(r, c)] += cfg.fd_step;
            let mut ym = y.clone();
            ym[(r, c)] -= cfg.fd_step;
            grad[(r, c)] = (accuracy(&yp)? - accuracy(&ym)?) / (2.0 * cfg.fd_step);
        }
        let gnorm = grad.norm();
        if gnorm < 1e-9 {
            converged = true;
            break;
        }
        let dir = &grad / gnorm;
        let mut accepted = false;
        let mut s = step;
        for _ in 0..12 {
            let cand = &y + &dir * s;
            let val = accuracy(&cand)?;
            if val > best {
                y = cand;
                best = val;
                step = (s * 2.0).min(1.0);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    debug_assert!(best >= init);
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Vector(y),
        objective: best,
        shift: 0.0,
        provenance: Provenance::GradientAscentMc,
        grad_norm: None,
        converged,
        flagged: false,
    })
}

/// Rows e_j - e_j' for all j' != j.
pub fn diff_transform(m: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(m - 1, m);
    let mut r = 0;
    for jp in 0..m {
        if jp == j {
            continue;
        }
        e[(r, j)] = 1.0;
        e[(r, jp)] = -1.0;
        r += 1;
    }
    e
}

// ---------------------------------------------------------------------------
// Thresholds, recentering, tuning
// ---------------------------------------------------------------------------

/// Averaged-mean test threshold and its predicted error for every task.
pub fn decision_threshold(pred: &ScorePrediction, task: usize) -> Result<DecisionRule> {
    if pred.means.ncols() != 1 || pred.props.m() != 2 {
        return Err(Error::ModelMismatch(
            "threshold rule requires a binary prediction".into(),
        ));
    }
    let k = pred.props.k();
    let mut zeta = DVector::zeros(k);
    let mut err = DVector::zeros(k);
    for i in 0..k {
        let (m1, m2) = (pred.mean(i, 0, 0), pred.mean(i, 1, 0));
        zeta[i] = 0.5 * (m1 + m2);
        err[i] = q_func((m1 - m2) / (2.0 * pred.sigma(i, 0)));
    }
    let _ = task;
    Ok(DecisionRule::Threshold {
        zeta,
        predicted_error: err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Make the midpoint of the two class means zero.
    MidpointZero,
    /// Make the class-1 mean zero.
    ClassMeanZero,
}

/// Shift the target task's scores by a constant so the requested statistic of
/// the predicted law vanishes. The predicted error is unchanged.
pub fn zero_shift(
    pred: &ScorePrediction,
    scores: &ScoreAssignment,
    task: usize,
    mode: ShiftMode,
) -> Result<OptimizedLabels> {
    if pred.means.ncols() != 1 {
        return Err(Error::ModelMismatch("zero shift requires a binary prediction".into()));
    }
    let m = pred.props.m();
    // adding ybar to every entry of the target task adds ybar to each of its
    // predicted means; the linear coefficient is the count below
    let coeff: f64 = match mode {
        ShiftMode::MidpointZero => 2.0,
        ShiftMode::ClassMeanZero => 1.0,
    };
    if coeff.abs() < 1e-14 {
        return Err(Error::DegenerateShift(coeff));
    }
    let ybar = match mode {
        ShiftMode::MidpointZero => -0.5 * (pred.mean(task, 0, 0) + pred.mean(task, 1, 0)),
        ShiftMode::ClassMeanZero => -pred.mean(task, 0, 0),
    };
    let mut y = scores.matrix().column(0).into_owned();
    for j in 0..m {
        y[m * task + j] += ybar;
    }
    Ok(OptimizedLabels {
        scores: ScoreAssignment::Binary(y),
        objective: 0.0,
        shift: ybar,
        provenance: Provenance::ClosedForm,
        grad_norm: None,
        converged: true,
        flagged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Classical,
    Optimized,
}

/// Predicted binary error of a candidate hyperparameter choice, re-solving
/// the load factors and (optionally) re-optimizing the labels.
pub fn predicted_error_for(
    stats: &SufficientStats,
    hyper: &Hyperparams,
    task: usize,
    mode: LabelMode,
) -> Result<f64> {
    let iso = crate::isotropic::build_isotropic_stats(stats, hyper)?;
    match mode {
        LabelMode::Optimized => Ok(optimal_labels_isotropic(&iso, task)?.objective),
        LabelMode::Classical => {
            let y = ScoreAssignment::classical_binary(stats.props.k());
            let (means, vars) = iso.law(&y)?;
            Ok(q_func(
                (means[2 * task] - means[2 * task + 1]) / (2.0 * vars[task].sqrt()),
            ))
        }
    }
}

/// Grid search over hyperparameter candidates on the predicted error.
/// Ties break toward smaller lambda, then lexicographically smaller gamma.
pub fn tune_hyperparams(
    stats: &SufficientStats,
    task: usize,
    mode: LabelMode,
    candidates: &[Hyperparams],
) -> Result<(Hyperparams, f64)> {
    if candidates.is_empty() {
        return Err(Error::ModelMismatch("empty candidate grid".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, hp) in candidates.iter().enumerate() {
        let err = predicted_error_for(stats, hp, task, mode)?;
        let better = match best {
            None => true,
            Some((bidx, berr)) => {
                if (err - berr).abs() > 1e-12 {
                    err < berr
                } else {
                    let b = &candidates[bidx];
                    hp.lambda < b.lambda
                        || (hp.lambda == b.lambda
                            && hp.gamma.iter().lt(b.gamma.iter().map(|g| g)))
                }
            }
        };
        if better {
            best = Some((idx, err));
        }
    }
    let (idx, err) = best.unwrap();
    Ok((candidates[idx].clone(), err))
}

// ---------------------------------------------------------------------------
// Backtracking gradient descent
// ---------------------------------------------------------------------------

struct DescentOutcome {
    x: DVector<f64>,
    grad_norm: f64,
    converged: bool,
}

/// Steepest descent with Armijo backtracking (c = 1e-4, halving).
/// `f` returns the objective and its gradient.
fn descend(
    f: impl Fn(&DVector<f64>) -> (f64, DVector<f64>),
    x0: DVector<f64>,
    max_iters: usize,
    grad_tol: f64,
) -> DescentOutcome {
    const ARMIJO_C: f64 = 1e-4;
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut step = 1.0;
    for _ in 0..max_iters {
        let gn = g.norm();
        if gn < grad_tol {
            return DescentOutcome {
                x,
                grad_norm: gn,
                converged: true,
            };
        }
        let mut s = step;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &x - &g * s;
            let (fc, gc) = f(&cand);
            if fc <= fx - ARMIJO_C * s * gn * gn {
                x = cand;
                fx = fc;
                g = gc;
                step = (s * 2.0).min(1e6);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            let gn = g.norm();
            return DescentOutcome {
                x,
                grad_norm: gn,
                converged: gn < grad_tol.max(1e-6),
            };
        }
    }
    let gn = g.norm();
    DescentOutcome {
        x,
        grad_norm: gn,
        converged: gn < grad_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::general::{solve_delta_general, DENSE_LIMIT_DEFAULT};
    use crate::isotropic::build_isotropic_stats;
    use crate::stats::{CovModel, SufficientStats};
    use approx::assert_abs_diff_eq;

    fn stats_with(beta: f64, counts: Vec<Vec<usize>>, scale: f64) -> SufficientStats {
        let p = 100;
        let props = ClassProportions::new(p, counts).unwrap();
        let mut mu1 = DVector::zeros(p);
        mu1[0] = scale;
        let mut mu1p = DVector::zeros(p);
        mu1p[1] = scale;
        let mu2 = &mu1 * beta + &mu1p * (1.0 - beta * beta).max(0.0).sqrt();
        let means = vec![vec![mu1.clone(), -mu1], vec![mu2.clone(), -mu2]];
        SufficientStats::from_known_means(props, &means, CovModel::Identity).unwrap()
    }

    #[test]
    fn equal_counts_give_antisymmetric_labels_and_zero_threshold() {
        let stats = stats_with(0.5, vec![vec![80, 80], vec![80, 80]], 1.0);
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let iso = build_isotropic_stats(&stats, &hp).unwrap();
        let opt = optimal_labels_isotropic(&iso, 0).unwrap();
        let y = opt.scores.matrix().column(0).into_owned();
        for i in 0..2 {
            assert_abs_diff_eq!(y[2 * i], -y[2 * i + 1], epsilon = 1e-10);
        }
        let pred = crate::isotropic::predict_binary_isotropic(&iso, &opt.scores).unwrap();
        let rule = decision_threshold(&pred, 0).unwrap();
        if let DecisionRule::Threshold { zeta, .. } = rule {
            assert!(zeta[0].abs() < 1e-10);
        } else {
            panic!("wrong rule");
        }
    }

    #[test]
    fn orthogonal_source_task_gets_zero_labels() {
        let stats = stats_with(0.0, vec![vec![100, 100], vec![60, 60]], 1.0);
        let hp = Hyperparams::new(2.0, vec![1.0, 1.0]).unwrap();
        let iso = build_isotropic_stats(&stats, &hp).unwrap();
        let opt = optimal_labels_isotropic(&iso, 1).unwrap();
        let y = opt.scores.matrix();
        assert!(y[(0, 0)].abs() < 1e-10 && y[(1, 0)].abs() < 1e-10);
        assert!(y[(2, 0)].abs() > 0.1);
    }

    #[test]
    fn optimal_error_matches_direct_evaluation_and_dominates_classical() {
        for seed in 0..8u64 {
            let beta = -0.9 + 0.25 * seed as f64;
            let stats = stats_with(beta, vec![vec![70, 110], vec![40, 60]], 1.2);
            let hp = Hyperparams::new(1.5, vec![1.0, 0.8]).unwrap();
            let iso = build_isotropic_stats(&stats, &hp).unwrap();
            let opt = optimal_labels_isotropic(&iso, 1).unwrap();
            // evaluate the error of the returned labels directly
            let (means, vars) = iso.law(&opt.scores).unwrap();
            let direct = q_func((means[2] - means[3]) / (2.0 * vars[1].sqrt()));
            assert_abs_diff_eq!(direct, opt.objective, epsilon = 1e-10);
            // dominance over classical labels on the predicted error
            let (mc, vc) = iso
                .law(&ScoreAssignment::classical_binary(2))
                .unwrap();
            let classical = q_func((mc[2] - mc[3]) / (2.0 * vc[1].sqrt()));
            assert!(opt.objective <= classical + 1e-12);
        }
    }

    #[test]
    fn scale_invariance_of_the_predicted_error() {
        let stats = stats_with(0.4, vec![vec![90, 60], vec![50, 40]], 1.0);
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let iso = build_isotropic_stats(&stats, &hp).unwrap();
        let opt = optimal_labels_isotropic(&iso, 0).unwrap();
        for &c in &[0.1, 3.0, 42.0] {
            let y = opt.scores.matrix().column(0).into_owned() * c;
            let (means, vars) = iso.law(&ScoreAssignment::Binary(y)).unwrap();
            let err = q_func((means[0] - means[1]) / (2.0 * vars[0].sqrt()));
            assert_abs_diff_eq!(err, opt.objective, epsilon = 1e-12);
        }
    }

    #[test]
    fn general_path_reduces_to_isotropic_optimum() {
        let stats = stats_with(0.6, vec![vec![70, 90], vec![30, 50]], 1.1);
        let hp = Hyperparams::new(1.0, vec![1.0, 1.2]).unwrap();
        let iso = build_isotropic_stats(&stats, &hp).unwrap();
        let gen = solve_delta_general(&stats, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let a = optimal_labels_isotropic(&iso, 1).unwrap();
        let b = optimal_labels_general(&gen, 1).unwrap();
        let ya = a.scores.matrix();
        let yb = b.scores.matrix();
        assert!((&ya - &yb).abs().max() < 1e-8);
    }

    #[test]
    fn neyman_pearson_threshold_basics() {
        let stats = stats_with(0.5, vec![vec![96, 64], vec![16, 10]], 1.0);
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let gen = solve_delta_general(&stats, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let opt = optimal_labels_neyman_pearson(&gen, 1, 0.5).unwrap();
        let pred = crate::general::predict_general(&gen, &opt.scores).unwrap();
        // eta = 0.5: threshold sits at the class-1 mean
        let zeta = np_threshold(&pred, 1, 0.5);
        assert_abs_diff_eq!(zeta, pred.mean(1, 0, 0), epsilon = 1e-12);
        // detection monotone in eta
        let mut last = -1.0;
        for &eta in &[1e-3, 1e-2, 0.1, 0.3, 0.6] {
            let det = np_detection(&pred, 1, np_threshold(&pred, 1, eta));
            assert!(det >= last - 1e-12);
            last = det;
        }
    }

    #[test]
    fn zero_shift_enforces_constraints_and_preserves_error() {
        let stats = stats_with(0.3, vec![vec![90, 120], vec![30, 60]], 1.0);
        let hp = Hyperparams::new(10.0, vec![1.0, 1.0]).unwrap();
        let iso = build_isotropic_stats(&stats, &hp).unwrap();
        let y = ScoreAssignment::classical_binary(2);
        let pred = crate::isotropic::predict_binary_isotropic(&iso, &y).unwrap();
        let err_before = q_func(
            (pred.mean(1, 0, 0) - pred.mean(1, 1, 0)) / (2.0 * pred.sigma(1, 0)),
        );
        let shifted = zero_shift(&pred, &y, 1, ShiftMode::MidpointZero).unwrap();
        let pred2 =
            crate::isotropic::predict_binary_isotropic(&iso, &shifted.scores).unwrap();
        assert!((pred2.mean(1, 0, 0) + pred2.mean(1, 1, 0)).abs() < 1e-10);
        let err_after = q_func(
            (pred2.mean(1, 0, 0) - pred2.mean(1, 1, 0)) / (2.0 * pred2.sigma(1, 0)),
        );
        assert_abs_diff_eq!(err_before, err_after, epsilon = 1e-10);
        // class-mean-zero variant
        let s2 = zero_shift(&pred, &y, 1, ShiftMode::ClassMeanZero).unwrap();
        let pred3 = crate::isotropic::predict_binary_isotropic(&iso, &s2.scores).unwrap();
        assert!(pred3.mean(1, 0, 0).abs() < 1e-10);
        // balanced symmetric configuration needs no shift
        let bal = stats_with(0.5, vec![vec![50, 50], vec![50, 50]], 1.0);
        let isob = build_isotropic_stats(&bal, &hp).unwrap();
        let predb =
            crate::isotropic::predict_binary_isotropic(&isob, &ScoreAssignment::classical_binary(2))
                .unwrap();
        let sb = zero_shift(&predb, &ScoreAssignment::classical_binary(2), 0, ShiftMode::MidpointZero)
            .unwrap();
        assert!(sb.shift.abs() < 1e-12);
    }

    #[test]
    fn tuning_picks_grid_minimum_and_prefers_small_lambda_on_ties() {
        let stats = stats_with(0.0, vec![vec![80, 80], vec![80, 80]], 1.0);
        let grid: Vec<Hyperparams> = [1e-3, 1e-2, 0.1, 1.0, 10.0]
            .iter()
            .map(|&l| Hyperparams::new(l, vec![1.0, 1.0]).unwrap())
            .collect();
        let (best, err) = tune_hyperparams(&stats, 0, LabelMode::Optimized, &grid).unwrap();
        // orthogonal tasks: smallest lambda attains the minimum (within ties)
        let mut errs = Vec::new();
        for hp in &grid {
            errs.push(predicted_error_for(&stats, hp, 0, LabelMode::Optimized).unwrap());
        }
        let min = errs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(err <= min + 1e-12);
        assert!(best.lambda <= 0.1 + 1e-12);
    }

    #[test]
    fn one_vs_all_post_conditions() {
        let p = 100;
        let props = ClassProportions::new(p, vec![vec![48, 48, 48], vec![12, 12, 12]]).unwrap();
        let mut means = Vec::new();
        for i in 0..2 {
            let mut task = Vec::new();
            for j in 0..3 {
                let mut mu = DVector::zeros(p);
                mu[j] = 2.0;
                mu[p - 1 - j] = if i == 1 { 1.0 } else { 0.0 };
                task.push(mu);
            }
            means.push(task);
        }
        let stats =
            SufficientStats::from_known_means(props, &means, CovModel::Identity).unwrap();
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let gen = solve_delta_general(&stats, &hp, DENSE_LIMIT_DEFAULT).unwrap();
        let opt = optimal_labels_one_vs_all(&gen, 0, 1, &DescentConfig::default()).unwrap();
        let law = BinaryLaw { gen: &gen, task: 0 };
        let y = opt.scores.matrix().column(0).into_owned();
        let m_own = law.mean_value(3 * 0 + 1, &y);
        let (c_own, _) = law.cov_value_grad(1, &y);
        assert!(m_own.abs() < 1e-9, "own mean {m_own}");
        assert!((c_own - 1.0).abs() < 1e-9, "own variance {c_own}");
    }
}
