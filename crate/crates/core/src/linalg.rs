//! Small dense linear-algebra helpers shared across the statistics engine.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric square root via eigendecomposition. Input must be symmetric PSD
/// up to rounding; tiny negative eigenvalues are clipped to zero.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Solve a symmetric positive definite system, failing loudly when the
/// conditioning estimate exceeds `cond_limit`.
pub fn spd_solve(a: &DMatrix<f64>, rhs: &DMatrix<f64>, cond_limit: f64) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(min > 0.0) || max / min > cond_limit {
        return Err(Error::SingularMatrix(format!(
            "condition estimate {:.3e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    match sym.cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => Err(Error::SingularMatrix("cholesky failed".into())),
    }
}

/// Least-squares pseudo-solve for symmetric systems: eigenvalues below
/// `rel_tol * |lambda|_max` are dropped. Used when a variance kernel is
/// numerically singular (near-duplicate tasks).
pub fn sym_pseudo_solve(a: &DMatrix<f64>, rhs: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut out = DVector::zeros(rhs.len());
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > rel_tol * max {
            let q = eig.eigenvectors.column(idx);
            out.axpy(q.dot(rhs) / lam, &q.into_owned(), 1.0);
        }
    }
    out
}

/// Condition number estimate of a symmetric matrix.
pub fn sym_cond(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::MAX, |acc, v| acc.min(v.abs()));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max.abs() / min
    }
}

/// Symmetrize and clip a covariance to PSD. Returns the clipped matrix and a
/// factor L with L L^T equal to it (for sampling).
pub fn psd_factor(cov: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -tol * max.max(1.0)) {
        return Err(Error::NonPsd(format!(
            "eigenvalue {:.3e} below -{:.1e}",
            eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min),
            tol
        )));
    }
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = v.max(0.0);
    }
    let l = &eig.eigenvectors * DMatrix::from_diagonal(&d.map(|v| v.sqrt()));
    let clipped = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
    Ok((clipped, l))
}

/// Gaussian upper-tail probability Q(t) = P(N(0,1) > t).
pub fn q_func(t: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2)
}

/// Inverse of `q_func` on (0, 1).
pub fn q_inv(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * q)
}

/// Standard normal CDF.
pub fn norm_cdf(t: f64) -> f64 {
    1.0 - q_func(t)
}

/// Standard normal density.
pub fn norm_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn q_func_matches_known_values() {
        assert_abs_diff_eq!(q_func(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q_func(1.6448536269514722), 0.05, epsilon = 1e-10);
        assert_abs_diff_eq!(q_inv(0.05), 1.6448536269514722, epsilon = 1e-8);
        for &t in &[-3.0, -0.7, 0.0, 0.4, 2.5, 4.0] {
            assert_abs_diff_eq!(q_inv(q_func(t)), t, epsilon = 1e-8);
        }
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let s = sym_sqrt(&a);
        assert_abs_diff_eq!(&s * &s, a, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_solve_matches_exact_on_regular_systems() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = sym_pseudo_solve(&a, &b, 1e-14);
        assert_abs_diff_eq!(&a * &x, b, epsilon = 1e-12);
    }
}
