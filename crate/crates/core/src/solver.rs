//! Exact finite-sample training: the dual solution of the coupled
//! least-squares SVM system, classification scores, and a brute-force primal
//! minimizer used as a test oracle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{Hyperparams, Preprocessed, ScoreAssignment};

/// Shared training state for one preprocessed dataset and one hyperparameter
/// choice: the factorization of Q^{-1} = (1/kp) Z^T A Z + I_n does not depend
/// on the scores, so it is computed once and reused across label sets.
pub struct SolverContext<'a> {
    pub prep: &'a Preprocessed,
    pub hyper: Hyperparams,
    coupling: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    qp: DMatrix<f64>,
    ptqp: DMatrix<f64>,
    offsets: Vec<usize>,
}

/// Lagrange multipliers and biases for one score assignment.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// n x q multipliers (q = 1 in binary mode, m in vector mode).
    pub alpha: DMatrix<f64>,
    /// k x q biases.
    pub b: DMatrix<f64>,
}

/// Classification score of one test point for one task.
#[derive(Debug, Clone)]
pub struct ScoreOutput {
    pub values: DVector<f64>,
    pub task: usize,
}

const COND_LIMIT: f64 = 1e12;

impl<'a> SolverContext<'a> {
    pub fn new(prep: &'a Preprocessed, hyper: &Hyperparams) -> Result<Self> {
        let data = &prep.data;
        let (k, p, n) = (data.k(), data.p(), data.n());
        if hyper.gamma.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "gamma has {} entries for {k} tasks",
                hyper.gamma.len()
            )));
        }
        let coupling = hyper.coupling();
        let kp = (k * p) as f64;

        let mut offsets = Vec::with_capacity(k + 1);
        offsets.push(0);
        for i in 0..k {
            offsets.push(offsets[i] + data.task_count(i));
        }

        // Q^{-1} = I_n + (1/kp) Z^T A Z, blocks G_{ii'} X_i^T X_{i'}.
        let mut qinv = DMatrix::identity(n, n);
        let tasks: Vec<DMatrix<f64>> = (0..k).map(|i| data.task_matrix(i)).collect();
        for i in 0..k {
            for j in i..k {
                let block = tasks[i].transpose() * &tasks[j] * (coupling[(i, j)] / kp);
                qinv.view_mut((offsets[i], offsets[j]), block.shape())
                    .zip_apply(&block, |q, v| *q += v);
                if j > i {
                    let bt = block.transpose();
                    qinv.view_mut((offsets[j], offsets[i]), bt.shape())
                        .zip_apply(&bt, |q, v| *q += v);
                }
            }
        }

        // lambda_min(Q^{-1}) >= 1, so its condition number equals lambda_max;
        // a few power iterations give a cheap estimate.
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lam_max = 1.0;
        for _ in 0..8 {
            let w = &qinv * &v;
            lam_max = w.norm();
            if lam_max == 0.0 {
                break;
            }
            v = w / lam_max;
        }
        if lam_max > COND_LIMIT {
            return Err(Error::SingularSystem(format!(
                "Q^-1 condition estimate {lam_max:.3e}"
            )));
        }

        let chol = qinv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularSystem("Q^-1 not positive definite".into()))?;

        let mut pmat = DMatrix::zeros(n, k);
        for i in 0..k {
            for r in offsets[i]..offsets[i + 1] {
                pmat[(r, i)] = 1.0;
            }
        }
        let qp = chol.solve(&pmat);
        let ptqp = pmat.transpose() * &qp;
        if crate::linalg::sym_cond(&ptqp) > COND_LIMIT {
            return Err(Error::SingularSystem(
                "P^T Q P condition estimate exceeds limit".into(),
            ));
        }
        Ok(Self {
            prep,
            hyper: hyper.clone(),
            coupling,
            chol,
            qp,
            ptqp,
            offsets,
        })
    }

    pub fn task_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Solve for (alpha, b) given a per-sample score matrix (n x q).
    pub fn resolve_samples(&self, y: &DMatrix<f64>) -> Result<DualSolution> {
        let n = self.prep.data.n();
        if y.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "score rows {} != n {}",
                y.nrows(),
                n
            )));
        }
        let qy = self.chol.solve(y);
        let ptqy = {
            let k = self.prep.data.k();
            let mut out = DMatrix::zeros(k, y.ncols());
            for i in 0..k {
                for c in 0..y.ncols() {
                    out[(i, c)] = (self.offsets[i]..self.offsets[i + 1])
                        .map(|r| qy[(r, c)])
                        .sum();
                }
            }
            out
        };
        let b = crate::linalg::spd_solve(&self.ptqp, &ptqy, COND_LIMIT)
            .map_err(|_| Error::SingularSystem("P^T Q P solve failed".into()))?;
        let alpha = qy - &self.qp * &b;
        Ok(DualSolution { alpha, b })
    }

    /// Solve for class-constant scores.
    pub fn resolve(&self, scores: &ScoreAssignment) -> Result<DualSolution> {
        let props = self.prep.data.proportions();
        scores.check_shape(&props)?;
        self.resolve_samples(&props.expand_to_samples(&scores.matrix()))
    }

    /// Score a batch of raw test points (columns of `x`) for one task.
    /// Returns q x N.
    pub fn score_batch(&self, sol: &DualSolution, x: &DMatrix<f64>, task: usize) -> Result<DMatrix<f64>> {
        score_batch_raw(self.prep, &self.coupling, &self.offsets, sol, x, task)
    }

    /// Data-side projections of a test batch, reusable across many duals
    /// (different label sets share them).
    pub fn project_batch(&self, x: &DMatrix<f64>, task: usize) -> Result<Vec<DMatrix<f64>>> {
        let data = &self.prep.data;
        let mean = &self.prep.record.task_means[task];
        let scale = self.prep.record.task_scales[task];
        let mut xc = x.clone();
        for mut c in xc.column_iter_mut() {
            c -= mean;
            c /= scale;
        }
        Ok((0..data.k())
            .map(|ip| data.task_matrix(ip).transpose() * &xc)
            .collect())
    }

    /// Score from precomputed projections.
    pub fn score_projected(
        &self,
        sol: &DualSolution,
        proj: &[DMatrix<f64>],
        task: usize,
    ) -> DMatrix<f64> {
        let (k, p) = (self.prep.data.k(), self.prep.data.p());
        let kp = (k * p) as f64;
        let q = sol.alpha.ncols();
        let nt = proj[0].ncols();
        let mut g = DMatrix::zeros(q, nt);
        for c in 0..nt {
            for r in 0..q {
                g[(r, c)] = sol.b[(task, r)];
            }
        }
        for ip in 0..k {
            let w = self.coupling[(ip, task)] / kp;
            if w == 0.0 {
                continue;
            }
            let a_i = sol.alpha.rows(self.offsets[ip], self.offsets[ip + 1] - self.offsets[ip]);
            g += (a_i.transpose() * &proj[ip]) * w;
        }
        g
    }

    /// Scores of every training column for its own task (n x q). For the
    /// exact system these equal Y - alpha entrywise.
    pub fn score_training(&self, sol: &DualSolution) -> DMatrix<f64> {
        let data = &self.prep.data;
        let (k, p) = (data.k(), data.p());
        let kp = (k * p) as f64;
        let q = sol.alpha.ncols();
        let mut out = DMatrix::zeros(data.n(), q);
        for i in 0..k {
            let xi = data.task_matrix(i);
            let mut g = DMatrix::zeros(xi.ncols(), q);
            for r in 0..xi.ncols() {
                for c in 0..q {
                    g[(r, c)] = sol.b[(i, c)];
                }
            }
            for ip in 0..k {
                let w = self.coupling[(ip, i)] / kp;
                if w == 0.0 {
                    continue;
                }
                let xj = data.task_matrix(ip);
                let a_i = sol
                    .alpha
                    .rows(self.offsets[ip], self.offsets[ip + 1] - self.offsets[ip]);
                g += (xi.transpose() * (&xj * a_i.into_owned())) * w;
            }
            out.view_mut((self.offsets[i], 0), (xi.ncols(), q)).copy_from(&g);
        }
        out
    }
}

/// Batch scoring without a solver context: only the preprocessed training
/// data, the coupling matrix and the dual variables are needed.
pub fn score_batch_raw(
    prep: &Preprocessed,
    coupling: &DMatrix<f64>,
    offsets: &[usize],
    sol: &DualSolution,
    x: &DMatrix<f64>,
    task: usize,
) -> Result<DMatrix<f64>> {
    let data = &prep.data;
    let (k, p) = (data.k(), data.p());
    if task >= k {
        return Err(Error::DimensionMismatch(format!("task {task} out of range")));
    }
    if x.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "test points have {} rows, expected {p}",
            x.nrows()
        )));
    }
    let kp = (k * p) as f64;
    let mean = &prep.record.task_means[task];
    let scale = prep.record.task_scales[task];
    let mut xc = x.clone();
    for mut c in xc.column_iter_mut() {
        c -= mean;
        c /= scale;
    }
    let q = sol.alpha.ncols();
    let nt = x.ncols();
    let mut g = DMatrix::zeros(q, nt);
    for c in 0..nt {
        for r in 0..q {
            g[(r, c)] = sol.b[(task, r)];
        }
    }
    for ip in 0..k {
        let w = coupling[(ip, task)] / kp;
        if w == 0.0 {
            continue;
        }
        let xi = data.task_matrix(ip);
        let proj = xi.transpose() * &xc; // n_ip x N
        let a_i = sol.alpha.rows(offsets[ip], offsets[ip + 1] - offsets[ip]);
        g += (a_i.transpose() * proj) * w;
    }
    Ok(g)
}

/// One-shot training: factorize and resolve a single score assignment.
pub fn solve_dual(
    prep: &Preprocessed,
    hyper: &Hyperparams,
    scores: &ScoreAssignment,
) -> Result<DualSolution> {
    SolverContext::new(prep, hyper)?.resolve(scores)
}

/// Score a single test point for one task.
pub fn score(
    ctx: &SolverContext,
    sol: &DualSolution,
    x: &DVector<f64>,
    task: usize,
) -> Result<ScoreOutput> {
    let g = ctx.score_batch(sol, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()), task)?;
    Ok(ScoreOutput {
        values: g.column(0).into_owned(),
        task,
    })
}

/// Direct minimizer of the primal objective, independent of the dual path.
/// Conjugate gradients on the (strictly convex) quadratic; intended for test
/// scales kp*q <= 500.
///
/// Weight convention: the returned (W_0, V, b) are in the units of the dual
/// reconstruction W_i = (e_i^T (x) I_p) A Z alpha, i.e. the residuals read
/// Y_i - X_i^T W_i / (kp) - b_i and the weight penalties carry an extra
/// 1/(kp). In these units the dual and primal solutions coincide exactly.
pub struct PrimalSolution {
    pub w0: DMatrix<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
    pub grad_norm: f64,
}

pub fn primal_oracle(
    prep: &Preprocessed,
    hyper: &Hyperparams,
    scores: &ScoreAssignment,
    max_iters: usize,
) -> Result<PrimalSolution> {
    let data = &prep.data;
    let (k, p) = (data.k(), data.p());
    let props = data.proportions();
    scores.check_shape(&props)?;
    let y = props.expand_to_samples(&scores.matrix());
    let q = y.ncols();
    let kp = (k * p) as f64;
    let lam = hyper.lambda * kp;
    let with_w0 = lam > 0.0;
    let tasks: Vec<DMatrix<f64>> = (0..k).map(|i| data.task_matrix(i)).collect();
    let mut offs = vec![0usize];
    for i in 0..k {
        offs.push(offs[i] + tasks[i].ncols());
    }

    let dim = (if with_w0 { p * q } else { 0 }) + k * p * q + k * q;
    let pack = |w0: &DMatrix<f64>, v: &[DMatrix<f64>], b: &DMatrix<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        let mut at = 0;
        if with_w0 {
            out.rows_mut(0, p * q).copy_from_slice(w0.as_slice());
            at += p * q;
        }
        for vi in v {
            out.rows_mut(at, p * q).copy_from_slice(vi.as_slice());
            at += p * q;
        }
        out.rows_mut(at, k * q).copy_from_slice(b.as_slice());
        out
    };
    let unpack = |x: &DVector<f64>| -> (DMatrix<f64>, Vec<DMatrix<f64>>, DMatrix<f64>) {
        let mut at = 0;
        let w0 = if with_w0 {
            let w = DMatrix::from_column_slice(p, q, &x.as_slice()[0..p * q]);
            at += p * q;
            w
        } else {
            DMatrix::zeros(p, q)
        };
        let v: Vec<DMatrix<f64>> = (0..k)
            .map(|_| {
                let m = DMatrix::from_column_slice(p, q, &x.as_slice()[at..at + p * q]);
                at += p * q;
                m
            })
            .collect();
        let b = DMatrix::from_column_slice(k, q, &x.as_slice()[at..at + k * q]);
        (w0, v, b)
    };

    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let (w0, v, b) = unpack(x);
        let mut gw0 = if with_w0 { &w0 / lam } else { DMatrix::zeros(p, q) };
        let mut gv = Vec::with_capacity(k);
        let mut gb = DMatrix::zeros(k, q);
        for i in 0..k {
            let wi = &w0 + &v[i];
            let yi = y.rows(offs[i], tasks[i].ncols());
            let mut resid = yi.into_owned() - tasks[i].transpose() * &wi / kp;
            for r in 0..resid.nrows() {
                for c in 0..q {
                    resid[(r, c)] -= b[(i, c)];
                }
            }
            let back = &tasks[i] * &resid / kp; // p x q
            if with_w0 {
                gw0 -= &back;
            }
            gv.push(&v[i] / (hyper.gamma[i] * kp) - &back);
            for c in 0..q {
                gb[(i, c)] = -resid.column(c).sum();
            }
        }
        pack(&gw0, &gv, &gb)
    };

    // Conjugate gradients on grad(x) = H x - f = 0, with H v obtained as
    // grad(v) - grad(0) (exact for a quadratic).
    let g0 = grad(&DVector::zeros(dim));
    let hmul = |v: &DVector<f64>| grad(v) - &g0;
    let mut x = DVector::zeros(dim);
    let mut r = -g0.clone();
    let mut d = r.clone();
    let mut rs = r.dot(&r);
    let tol = 1e-9f64;
    for _ in 0..max_iters {
        if rs.sqrt() < tol {
            break;
        }
        let hd = hmul(&d);
        let alpha = rs / d.dot(&hd);
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        let rs_new = r.dot(&r);
        d = &r + &d * (rs_new / rs);
        rs = rs_new;
    }
    let gn = grad(&x).norm();
    if gn > 1e-8 {
        return Err(Error::NoConvergence(format!(
            "primal oracle gradient norm {gn:.3e} after {max_iters} iterations"
        )));
    }
    let (w0, v, b) = unpack(&x);
    Ok(PrimalSolution {
        w0,
        v,
        b,
        grad_norm: gn,
    })
}

/// Primal objective value, for oracle diagnostics.
pub fn primal_objective(
    prep: &Preprocessed,
    hyper: &Hyperparams,
    scores: &ScoreAssignment,
    sol: &PrimalSolution,
) -> f64 {
    let data = &prep.data;
    let (k, p) = (data.k(), data.p());
    let props = data.proportions();
    let y = props.expand_to_samples(&scores.matrix());
    let kp = (k * p) as f64;
    let mut total = 0.0;
    if hyper.lambda > 0.0 {
        total += sol.w0.iter().map(|x| x * x).sum::<f64>() / (2.0 * hyper.lambda * kp);
    }
    let mut offs = 0;
    for i in 0..k {
        total += sol.v[i].iter().map(|x| x * x).sum::<f64>() / (2.0 * hyper.gamma[i] * kp);
        let xi = data.task_matrix(i);
        let wi = &sol.w0 + &sol.v[i];
        let mut resid = y.rows(offs, xi.ncols()).into_owned() - xi.transpose() * &wi / kp;
        for r in 0..resid.nrows() {
            for c in 0..resid.ncols() {
                resid[(r, c)] -= sol.b[(i, c)];
            }
        }
        total += 0.5 * resid.iter().map(|x| x * x).sum::<f64>();
        offs += xi.ncols();
    }
    total
}
