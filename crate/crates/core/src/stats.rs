//! Sufficient statistics consumed by the asymptotic engine: the Gram matrix
//! of (task-wise centered) class means, class proportions, and a covariance
//! model. Statistics are either known exactly (synthetic ground truth) or
//! estimated from the training data itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ClassProportions, Preprocessed};

/// Covariance model for the class-conditional distributions.
#[derive(Debug, Clone)]
pub enum CovModel {
    /// All covariances are the identity.
    Identity,
    /// Per-(task,class) scalar multiples of the identity.
    Isotropic(Vec<Vec<f64>>),
    /// Per-(task,class) dense sample covariances.
    Sample(Vec<Vec<DMatrix<f64>>>),
}

impl CovModel {
    /// The scalar factor at (i,j) for the reduced (block-scalar) path.
    pub fn scalar(&self, i: usize, j: usize) -> Option<f64> {
        match self {
            CovModel::Identity => Some(1.0),
            CovModel::Isotropic(a) => Some(a[i][j]),
            CovModel::Sample(_) => None,
        }
    }

    pub fn is_reduced(&self) -> bool {
        !matches!(self, CovModel::Sample(_))
    }
}

/// Whether statistics are ground truth or plug-in estimates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatSource {
    Known,
    /// `biased_diagonal` flags same-class entries that had to fall back to a
    /// single-set estimate because n_ij < 2.
    Estimated { biased_diagonal: bool },
}

#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub props: ClassProportions,
    /// km x km Gram matrix of centered class means.
    pub gram: DMatrix<f64>,
    /// Centered class means themselves, when available (required by the
    /// dense covariance path).
    pub means: Option<Vec<Vec<DVector<f64>>>>,
    pub cov: CovModel,
    pub source: StatSource,
}

impl SufficientStats {
    /// Build from known raw class means; centering is applied here.
    pub fn from_known_means(
        props: ClassProportions,
        raw_means: &[Vec<DVector<f64>>],
        cov: CovModel,
    ) -> Result<Self> {
        let (k, m) = (props.k(), props.m());
        if raw_means.len() != k || raw_means.iter().any(|t| t.len() != m) {
            return Err(Error::DimensionMismatch("mean table shape".into()));
        }
        let mut centered = Vec::with_capacity(k);
        for i in 0..k {
            let n_i = props.n_i(i) as f64;
            let mut bar = DVector::zeros(raw_means[0][0].len());
            for j in 0..m {
                bar.axpy(props.counts[i][j] as f64 / n_i, &raw_means[i][j], 1.0);
            }
            centered.push((0..m).map(|j| &raw_means[i][j] - &bar).collect::<Vec<_>>());
        }
        let gram = DMatrix::from_fn(k * m, k * m, |a, b| {
            centered[a / m][a % m].dot(&centered[b / m][b % m])
        });
        Ok(Self {
            props,
            gram,
            means: Some(centered),
            cov,
            source: StatSource::Known,
        })
    }

    /// k x k Gram of the within-task mean differences (binary mode).
    pub fn delta_gram(&self) -> Result<DMatrix<f64>> {
        let (k, m) = (self.props.k(), self.props.m());
        if m != 2 {
            return Err(Error::ModelMismatch(format!(
                "delta gram requires m = 2, have m = {m}"
            )));
        }
        // delta_mu_i = centered(i,1) - centered(i,2); the Gram transform is
        // exact linear algebra on the stored km Gram.
        let mut e = DMatrix::zeros(k * m, k);
        for i in 0..k {
            e[(2 * i, i)] = 1.0;
            e[(2 * i + 1, i)] = -1.0;
        }
        Ok(e.transpose() * &self.gram * e)
    }

    /// Restrict the statistics to a subset of classes (one-vs-one reduction).
    /// Means are re-centered with the restricted proportions.
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<SufficientStats> {
        let means = self
            .means
            .as_ref()
            .ok_or_else(|| Error::ModelMismatch("class restriction needs mean vectors".into()))?;
        let (k, m) = (self.props.k(), self.props.m());
        if classes.iter().any(|&j| j >= m) {
            return Err(Error::DimensionMismatch("class index out of range".into()));
        }
        let counts: Vec<Vec<usize>> = (0..k)
            .map(|i| classes.iter().map(|&j| self.props.counts[i][j]).collect())
            .collect();
        let props = ClassProportions::new(self.props.p, counts)?;
        // Means here are centered with the *full* task mean; re-centering with
        // the restricted weights is exactly the restricted-problem centering.
        let raw: Vec<Vec<DVector<f64>>> = (0..k)
            .map(|i| classes.iter().map(|&j| means[i][j].clone()).collect())
            .collect();
        let cov = match &self.cov {
            CovModel::Identity => CovModel::Identity,
            CovModel::Isotropic(a) => CovModel::Isotropic(
                (0..k)
                    .map(|i| classes.iter().map(|&j| a[i][j]).collect())
                    .collect(),
            ),
            CovModel::Sample(s) => CovModel::Sample(
                (0..k)
                    .map(|i| classes.iter().map(|&j| s[i][j].clone()).collect())
                    .collect(),
            ),
        };
        let mut out = SufficientStats::from_known_means(props, &raw, cov)?;
        out.source = self.source.clone();
        Ok(out)
    }
}

/// Plug-in estimate of the centered-mean Gram matrix from a centered
/// dataset. Same-task entries use two disjoint half-samples per class so the
/// product estimate is unbiased; cross-task entries use all samples. When a
/// class has a single sample the halves coincide and the corresponding
/// entries are biased (flagged in the result).
pub fn estimate_mean_products(prep: &Preprocessed) -> Result<SufficientStats> {
    let data = &prep.data;
    let (k, m) = (data.k(), data.m());
    let props = data.proportions();
    let mut biased = false;

    // Per (i,j): class mean over all columns, and over the two halves.
    let mut full = vec![Vec::with_capacity(m); k];
    let mut half_a = vec![Vec::with_capacity(m); k];
    let mut half_b = vec![Vec::with_capacity(m); k];
    for i in 0..k {
        for j in 0..m {
            let b = data.block(i, j);
            let n = b.ncols();
            let mean = |cols: std::ops::Range<usize>| -> DVector<f64> {
                let mut v = DVector::zeros(b.nrows());
                for c in cols.clone() {
                    v += b.column(c);
                }
                v / cols.len() as f64
            };
            full[i].push(mean(0..n));
            if n >= 2 {
                let h = n / 2;
                half_a[i].push(mean(0..h));
                half_b[i].push(mean(h..n));
            } else {
                biased = true;
                half_a[i].push(mean(0..n));
                half_b[i].push(mean(0..n));
            }
        }
    }
    // Weighted re-centering within each task (weights from full counts); the
    // task-mean offset of the centered data cancels exactly in this combo.
    let center = |means: &mut Vec<Vec<DVector<f64>>>| {
        for i in 0..k {
            let n_i = props.n_i(i) as f64;
            let mut bar = DVector::zeros(data.p());
            for j in 0..m {
                bar.axpy(props.counts[i][j] as f64 / n_i, &means[i][j], 1.0);
            }
            for j in 0..m {
                means[i][j] -= &bar;
            }
        }
    };
    center(&mut full);
    center(&mut half_a);
    center(&mut half_b);

    let mut gram = DMatrix::zeros(k * m, k * m);
    for a in 0..k * m {
        let (ia, ja) = (a / m, a % m);
        for b in a..k * m {
            let (ib, jb) = (b / m, b % m);
            let v = if ia != ib {
                full[ia][ja].dot(&full[ib][jb])
            } else {
                0.5 * (half_a[ia][ja].dot(&half_b[ib][jb])
                    + half_b[ia][ja].dot(&half_a[ib][jb]))
            };
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    Ok(SufficientStats {
        props,
        gram,
        means: Some(full),
        cov: CovModel::Identity,
        source: StatSource::Estimated {
            biased_diagonal: biased,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovStrategy {
    Isotropic,
    Sample,
}

/// Plug-in covariance estimates from a centered dataset.
pub fn estimate_covariances(prep: &Preprocessed, strategy: CovStrategy) -> CovModel {
    let data = &prep.data;
    let (k, m, p) = (data.k(), data.m(), data.p());
    match strategy {
        CovStrategy::Isotropic => {
            let alphas = (0..k)
                .map(|i| {
                    (0..m)
                        .map(|j| {
                            let b = data.block(i, j);
                            b.iter().map(|x| x * x).sum::<f64>() / (p * b.ncols()) as f64
                        })
                        .collect()
                })
                .collect();
            CovModel::Isotropic(alphas)
        }
        CovStrategy::Sample => {
            let covs = (0..k)
                .map(|i| {
                    (0..m)
                        .map(|j| {
                            let b = data.block(i, j);
                            b * b.transpose() / b.ncols() as f64
                        })
                        .collect()
                })
                .collect();
            CovModel::Sample(covs)
        }
    }
}
