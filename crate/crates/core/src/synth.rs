//! Synthetic Gaussian-mixture generation with exact ground-truth statistics,
//! the reproducibility surface for every benchmark preset.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassProportions, MtlDataset};
use crate::stats::{CovModel, SufficientStats};

/// Class mean construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanModel {
    /// Explicit per-(task,class) mean vectors.
    Explicit { means: Vec<Vec<Vec<f64>>> },
    /// Task 1 uses the base means; task i >= 2 uses
    /// beta_i * base_j + sqrt(1 - beta_i^2) * complement_{i,j}.
    BetaCorrelated {
        base: Vec<Vec<f64>>,
        betas: Vec<f64>,
        complements: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthCov {
    Identity,
    Isotropic { alphas: Vec<Vec<f64>> },
    Explicit { matrices: Vec<Vec<Vec<Vec<f64>>>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    /// Per-task, per-class training sample counts.
    pub counts: Vec<Vec<usize>>,
    pub mean_model: MeanModel,
    pub cov_model: SynthCov,
    pub seed: u64,
    /// Test samples per (task, class) in the bundled test set.
    #[serde(default)]
    pub test_per_class: usize,
}

/// Deterministic per-purpose random streams derived from a base seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_TEST: u64 = 2;

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn m(&self) -> usize {
        self.counts.first().map(|t| t.len()).unwrap_or(0)
    }

    /// Resolved per-(task,class) mean vectors.
    pub fn means(&self) -> Result<Vec<Vec<DVector<f64>>>> {
        let (k, m, p) = (self.k(), self.m(), self.p);
        let to_vec = |v: &Vec<f64>, what: &str| -> Result<DVector<f64>> {
            if v.len() != p {
                return Err(Error::BadSpec(format!(
                    "{what} has length {}, expected {p}",
                    v.len()
                )));
            }
            Ok(DVector::from_column_slice(v))
        };
        match &self.mean_model {
            MeanModel::Explicit { means } => {
                if means.len() != k || means.iter().any(|t| t.len() != m) {
                    return Err(Error::BadSpec("explicit mean table shape".into()));
                }
                means
                    .iter()
                    .map(|t| t.iter().map(|v| to_vec(v, "mean")).collect())
                    .collect()
            }
            MeanModel::BetaCorrelated {
                base,
                betas,
                complements,
            } => {
                if base.len() != m {
                    return Err(Error::BadSpec("base means must cover every class".into()));
                }
                if betas.len() != k - 1 || complements.len() != k - 1 {
                    return Err(Error::BadSpec(
                        "betas/complements must cover tasks 2..k".into(),
                    ));
                }
                if betas.iter().any(|b| !(-1.0..=1.0).contains(b)) {
                    return Err(Error::BadSpec("beta outside [-1, 1]".into()));
                }
                let base: Vec<DVector<f64>> = base
                    .iter()
                    .map(|v| to_vec(v, "base mean"))
                    .collect::<Result<_>>()?;
                let mut out = vec![base.clone()];
                for t in 0..k - 1 {
                    if complements[t].len() != m {
                        return Err(Error::BadSpec("complement table shape".into()));
                    }
                    let b = betas[t];
                    let w = (1.0 - b * b).max(0.0).sqrt();
                    let task: Vec<DVector<f64>> = (0..m)
                        .map(|j| {
                            let c = to_vec(&complements[t][j], "complement")?;
                            Ok(&base[j] * b + c * w)
                        })
                        .collect::<Result<_>>()?;
                    out.push(task);
                }
                Ok(out)
            }
        }
    }

    /// Resolved covariance model (and per-(task,class) factors for drawing).
    pub fn cov(&self) -> Result<CovModel> {
        let (k, m, p) = (self.k(), self.m(), self.p);
        match &self.cov_model {
            SynthCov::Identity => Ok(CovModel::Identity),
            SynthCov::Isotropic { alphas } => {
                if alphas.len() != k || alphas.iter().any(|t| t.len() != m) {
                    return Err(Error::BadSpec("isotropic alpha table shape".into()));
                }
                if alphas.iter().flatten().any(|&a| !(a > 0.0)) {
                    return Err(Error::BadSpec("alphas must be positive".into()));
                }
                Ok(CovModel::Isotropic(alphas.clone()))
            }
            SynthCov::Explicit { matrices } => {
                if matrices.len() != k || matrices.iter().any(|t| t.len() != m) {
                    return Err(Error::BadSpec("covariance table shape".into()));
                }
                let mut out = Vec::with_capacity(k);
                for t in matrices {
                    let mut task = Vec::with_capacity(m);
                    for rows in t {
                        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                            return Err(Error::BadSpec("covariance matrix shape".into()));
                        }
                        let mut mat = DMatrix::zeros(p, p);
                        for (r, row) in rows.iter().enumerate() {
                            for (c, &v) in row.iter().enumerate() {
                                mat[(r, c)] = v;
                            }
                        }
                        task.push(mat);
                    }
                    out.push(task);
                }
                Ok(CovModel::Sample(out))
            }
        }
    }

    fn factors(&self) -> Result<Vec<Vec<CovFactor>>> {
        let (k, m) = (self.k(), self.m());
        Ok(match self.cov()? {
            CovModel::Identity => vec![vec![CovFactor::Scalar(1.0); m]; k],
            CovModel::Isotropic(a) => (0..k)
                .map(|i| (0..m).map(|j| CovFactor::Scalar(a[i][j].sqrt())).collect())
                .collect(),
            CovModel::Sample(c) => {
                let mut out = Vec::with_capacity(k);
                for t in c {
                    let mut task = Vec::with_capacity(m);
                    for mat in t {
                        let (_, l) = crate::linalg::psd_factor(&mat, 1e-9)?;
                        task.push(CovFactor::Dense(l));
                    }
                    out.push(task);
                }
                out
            }
        })
    }
}

#[derive(Clone)]
enum CovFactor {
    Scalar(f64),
    Dense(DMatrix<f64>),
}

/// Draw `count` samples of class (i, j).
fn draw_block(
    rng: &mut ChaCha12Rng,
    mean: &DVector<f64>,
    factor: &CovFactor,
    p: usize,
    count: usize,
) -> DMatrix<f64> {
    let normal = rand_distr::StandardNormal;
    match factor {
        CovFactor::Scalar(s) => DMatrix::from_fn(p, count, |r, _| {
            mean[r] + s * {
                let v: f64 = normal.sample(rng);
                v
            }
        }),
        CovFactor::Dense(l) => {
            let z = DMatrix::from_fn(p, count, |_, _| {
                let v: f64 = normal.sample(rng);
                v
            });
            let mut out = l * z;
            for mut c in out.column_iter_mut() {
                c += mean;
            }
            out
        }
    }
}

/// Training set, bundled test set, and exact ground-truth statistics for a
/// synthetic specification. Reproducible for a fixed seed.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(MtlDataset, Vec<Vec<DMatrix<f64>>>, SufficientStats)> {
    let (k, m, p) = (spec.k(), spec.m(), spec.p);
    if k == 0 || m == 0 || p == 0 {
        return Err(Error::BadSpec("empty dimensions".into()));
    }
    let means = spec.means()?;
    let factors = spec.factors()?;
    let mut rng = stream_rng(spec.seed, STREAM_TRAIN);
    let mut blocks = Vec::with_capacity(k);
    for i in 0..k {
        let mut task = Vec::with_capacity(m);
        for j in 0..m {
            task.push(draw_block(
                &mut rng,
                &means[i][j],
                &factors[i][j],
                p,
                spec.counts[i][j],
            ));
        }
        blocks.push(task);
    }
    let train = MtlDataset::new(blocks)?;

    let mut trng = stream_rng(spec.seed, STREAM_TEST);
    let test = (0..k)
        .map(|i| {
            (0..m)
                .map(|j| {
                    draw_block(
                        &mut trng,
                        &means[i][j],
                        &factors[i][j],
                        p,
                        spec.test_per_class,
                    )
                })
                .collect()
        })
        .collect();

    let props = ClassProportions::new(p, spec.counts.clone())?;
    let truth = SufficientStats::from_known_means(props, &means, spec.cov()?)?;
    Ok((train, test, truth))
}

/// Draw a fresh test block of class (i, j) from a dedicated stream.
pub fn draw_test(
    spec: &SyntheticSpec,
    stream: u64,
    task: usize,
    class: usize,
    count: usize,
) -> Result<DMatrix<f64>> {
    let means = spec.means()?;
    let factors = spec.factors()?;
    let mut rng = stream_rng(spec.seed, stream);
    Ok(draw_block(
        &mut rng,
        &means[task][class],
        &factors[task][class],
        spec.p,
        count,
    ))
}

/// The standard two-task benchmark geometry: base means 2 e_j, complements
/// e_{p-1-j}, a single correlation parameter.
pub fn beta_benchmark_spec(
    p: usize,
    counts: Vec<Vec<usize>>,
    beta: f64,
    mean_scale: f64,
    perp_scale: f64,
    seed: u64,
) -> SyntheticSpec {
    let m = counts[0].len();
    let base: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut v = vec![0.0; p];
            v[j] = mean_scale;
            v
        })
        .collect();
    let complements = vec![(0..m)
        .map(|j| {
            let mut v = vec![0.0; p];
            v[p - 1 - j] = perp_scale;
            v
        })
        .collect::<Vec<_>>()];
    SyntheticSpec {
        p,
        counts,
        mean_model: MeanModel::BetaCorrelated {
            base,
            betas: vec![beta],
            complements,
        },
        cov_model: SynthCov::Identity,
        seed,
        test_per_class: 0,
    }
}
