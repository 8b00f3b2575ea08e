//! Dataset containers, hyperparameters, score (label) assignments and the
//! task-wise preprocessing shared by every downstream stage.
//!
//! Data layout is task-major, class-minor throughout: flat index
//! `m * i + j` addresses class `j` of task `i`, matching the block layout of
//! the stacked data matrix and of every small-dimensional statistic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Multi-task dataset: for each task `i` and class `j`, a `p x n_ij` block of
/// feature columns.
#[derive(Debug, Clone)]
pub struct MtlDataset {
    p: usize,
    blocks: Vec<Vec<DMatrix<f64>>>,
}

impl MtlDataset {
    pub fn new(blocks: Vec<Vec<DMatrix<f64>>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::DimensionMismatch("no tasks".into()));
        }
        let m = blocks[0].len();
        if m < 1 {
            return Err(Error::DimensionMismatch("no classes".into()));
        }
        let p = blocks[0][0].nrows();
        for (i, task) in blocks.iter().enumerate() {
            if task.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "task {} has {} classes, expected {m}",
                    i + 1,
                    task.len()
                )));
            }
            for (j, b) in task.iter().enumerate() {
                if b.nrows() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "block ({},{}) has {} rows, expected {p}",
                        i + 1,
                        j + 1,
                        b.nrows()
                    )));
                }
                if b.ncols() == 0 {
                    return Err(Error::InsufficientSamples(format!(
                        "block ({},{}) is empty",
                        i + 1,
                        j + 1
                    )));
                }
                if b.iter().any(|x| !x.is_finite()) {
                    return Err(Error::DimensionMismatch(format!(
                        "block ({},{}) contains non-finite entries",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { p, blocks })
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn m(&self) -> usize {
        self.blocks[0].len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i][j]
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        self.blocks[i][j].ncols()
    }

    pub fn task_count(&self, i: usize) -> usize {
        self.blocks[i].iter().map(|b| b.ncols()).sum()
    }

    pub fn n(&self) -> usize {
        (0..self.k()).map(|i| self.task_count(i)).sum()
    }

    /// Concatenated `p x n_i` matrix of one task's samples, class-minor order.
    pub fn task_matrix(&self, i: usize) -> DMatrix<f64> {
        let n_i = self.task_count(i);
        let mut out = DMatrix::zeros(self.p, n_i);
        let mut col = 0;
        for b in &self.blocks[i] {
            out.view_mut((0, col), (self.p, b.ncols())).copy_from(b);
            col += b.ncols();
        }
        out
    }

    pub fn proportions(&self) -> ClassProportions {
        ClassProportions {
            p: self.p,
            counts: self
                .blocks
                .iter()
                .map(|t| t.iter().map(|b| b.ncols()).collect())
                .collect(),
        }
    }

    /// Restrict to a subset of classes (used by the one-vs-one reduction).
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|t| classes.iter().map(|&j| t[j].clone()).collect())
            .collect();
        MtlDataset::new(blocks)
    }
}

/// Sample counts and the dimension ratios derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProportions {
    pub p: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ClassProportions {
    pub fn new(p: usize, counts: Vec<Vec<usize>>) -> Result<Self> {
        if counts.is_empty() || counts[0].is_empty() {
            return Err(Error::DimensionMismatch("empty count table".into()));
        }
        let m = counts[0].len();
        if counts.iter().any(|t| t.len() != m) {
            return Err(Error::DimensionMismatch("ragged count table".into()));
        }
        if counts.iter().flatten().any(|&c| c == 0) {
            return Err(Error::InsufficientSamples("zero-count class".into()));
        }
        Ok(Self { p, counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn m(&self) -> usize {
        self.counts[0].len()
    }

    pub fn n(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn n_i(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    /// n/p ratio.
    pub fn c0(&self) -> f64 {
        self.n() as f64 / self.p as f64
    }

    pub fn c_ij(&self, i: usize, j: usize) -> f64 {
        self.counts[i][j] as f64 / self.n() as f64
    }

    pub fn c_i(&self, i: usize) -> f64 {
        self.n_i(i) as f64 / self.n() as f64
    }

    /// Flat index of class `j` in task `i`.
    pub fn flat(&self, i: usize, j: usize) -> usize {
        self.m() * i + j
    }

    /// Per-task weighted centering of a score matrix: subtracts from every
    /// class row its task's count-weighted row mean.
    pub fn center_scores(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.m();
        let mut out = scores.clone();
        for i in 0..self.k() {
            let n_i = self.n_i(i) as f64;
            for c in 0..scores.ncols() {
                let mean: f64 = (0..m)
                    .map(|j| scores[(self.flat(i, j), c)] * self.counts[i][j] as f64)
                    .sum::<f64>()
                    / n_i;
                for j in 0..m {
                    out[(self.flat(i, j), c)] -= mean;
                }
            }
        }
        out
    }

    /// Expand per-(task,class) rows to per-sample rows (task-major layout).
    pub fn expand_to_samples(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), scores.ncols());
        let mut row = 0;
        for i in 0..self.k() {
            for j in 0..self.m() {
                for _ in 0..self.counts[i][j] {
                    for c in 0..scores.ncols() {
                        out[(row, c)] = scores[(self.flat(i, j), c)];
                    }
                    row += 1;
                }
            }
        }
        out
    }
}

/// Relatedness coefficient and per-task ridge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lambda: f64,
    pub gamma: Vec<f64>,
}

impl Hyperparams {
    pub fn new(lambda: f64, gamma: Vec<f64>) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::DimensionMismatch(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if gamma.is_empty() || gamma.iter().any(|&g| !(g.is_finite() && g > 0.0)) {
            return Err(Error::DimensionMismatch(
                "gamma entries must be finite and > 0".into(),
            ));
        }
        Ok(Self { lambda, gamma })
    }

    pub fn uniform(k: usize, lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, vec![gamma; k])
    }

    /// The k x k coupling matrix D_gamma + lambda * 1 1^T.
    pub fn coupling(&self) -> DMatrix<f64> {
        let k = self.gamma.len();
        DMatrix::from_fn(k, k, |i, j| {
            self.lambda + if i == j { self.gamma[i] } else { 0.0 }
        })
    }

    /// Symmetric square root of the coupling matrix.
    pub fn coupling_sqrt(&self) -> DMatrix<f64> {
        crate::linalg::sym_sqrt(&self.coupling())
    }
}

/// Per-(task,class) training scores. Binary mode stores one scalar per
/// (task,class); vector mode one m-row per (task,class).
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreAssignment {
    Binary(DVector<f64>),
    Vector(DMatrix<f64>),
}

impl ScoreAssignment {
    pub fn classical_binary(k: usize) -> Self {
        ScoreAssignment::Binary(DVector::from_fn(2 * k, |r, _| {
            if r % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }))
    }

    pub fn one_hot(k: usize, m: usize) -> Self {
        ScoreAssignment::Vector(DMatrix::from_fn(k * m, m, |r, c| {
            if r % m == c {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// One column per output; binary mode is the single-column case.
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            ScoreAssignment::Binary(v) => DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
            ScoreAssignment::Vector(mat) => mat.clone(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            ScoreAssignment::Binary(_) => 1,
            ScoreAssignment::Vector(m) => m.ncols(),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, ScoreAssignment::Binary(_))
    }

    /// Centered form: per task, the count-weighted mean over classes is zero.
    pub fn centered(&self, props: &ClassProportions) -> DMatrix<f64> {
        props.center_scores(&self.matrix())
    }

    pub fn check_shape(&self, props: &ClassProportions) -> Result<()> {
        let rows = self.matrix().nrows();
        let want = props.k() * props.m();
        match self {
            // Scalar scores: one per (task, class). With m = 2 this is the
            // binary vector; for m > 2 it is the fictitious two-class
            // reduction used by the per-class machines.
            ScoreAssignment::Binary(_) => {
                if rows != want {
                    return Err(Error::DimensionMismatch(format!(
                        "scalar score length {rows}, expected {want}"
                    )));
                }
            }
            ScoreAssignment::Vector(mat) => {
                if rows != want || mat.ncols() != props.m() {
                    return Err(Error::DimensionMismatch(format!(
                        "score matrix {}x{}, expected {}x{}",
                        rows,
                        mat.ncols(),
                        want,
                        props.m()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which normalization `preprocess` applies after task-wise centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormMode {
    /// No normalization (the per-task scale is recorded as 1).
    None,
    /// Divide each task block by (1/(n_i p)) tr(X X^T), as the training
    /// recipes print it.
    Trace,
    /// Divide by the square root of the trace ratio so the post-normalization
    /// ratio is exactly 1.
    SqrtTrace,
}

impl std::str::FromStr for NormMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(NormMode::None),
            "trace" => Ok(NormMode::Trace),
            "sqrt_trace" => Ok(NormMode::SqrtTrace),
            other => Err(format!("unknown norm mode `{other}`")),
        }
    }
}

/// Record of the preprocessing applied to a dataset. Scoring a test point
/// re-applies the same transform: x -> (x - task_mean) / task_scale.
#[derive(Debug, Clone)]
pub struct Preprocessing {
    pub task_means: Vec<DVector<f64>>,
    pub task_scales: Vec<f64>,
}

/// A centered (and possibly normalized) dataset together with the transform
/// that produced it.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub data: MtlDataset,
    pub record: Preprocessing,
}

/// Task-wise centering: subtract each task's sample mean from its columns.
/// Class block boundaries are preserved.
pub fn center_tasks(dataset: &MtlDataset) -> (MtlDataset, Vec<DVector<f64>>) {
    let mut means = Vec::with_capacity(dataset.k());
    let mut blocks = Vec::with_capacity(dataset.k());
    for i in 0..dataset.k() {
        let n_i = dataset.task_count(i) as f64;
        let mut mean = DVector::zeros(dataset.p());
        for j in 0..dataset.m() {
            for c in dataset.block(i, j).column_iter() {
                mean += c;
            }
        }
        mean /= n_i;
        let task = (0..dataset.m())
            .map(|j| {
                let mut b = dataset.block(i, j).clone();
                for mut c in b.column_iter_mut() {
                    c -= &mean;
                }
                b
            })
            .collect();
        blocks.push(task);
        means.push(mean);
    }
    (MtlDataset { p: dataset.p(), blocks }, means)
}

/// Per-task trace ratio (1/(n_i p)) tr(X_i X_i^T) of an already-centered
/// dataset.
pub fn trace_ratios(dataset: &MtlDataset) -> Vec<f64> {
    (0..dataset.k())
        .map(|i| {
            let ss: f64 = (0..dataset.m())
                .map(|j| dataset.block(i, j).iter().map(|x| x * x).sum::<f64>())
                .sum();
            ss / (dataset.task_count(i) as f64 * dataset.p() as f64)
        })
        .collect()
}

/// Normalize an already-centered dataset task-wise. Returns the per-task
/// divisors actually applied to the columns.
pub fn normalize_tasks(dataset: &MtlDataset, mode: NormMode) -> Result<(MtlDataset, Vec<f64>)> {
    let ratios = trace_ratios(dataset);
    let scales: Vec<f64> = match mode {
        NormMode::None => vec![1.0; dataset.k()],
        NormMode::Trace => ratios.clone(),
        NormMode::SqrtTrace => ratios.iter().map(|r| r.sqrt()).collect(),
    };
    for (i, &s) in scales.iter().enumerate() {
        if mode != NormMode::None && (!s.is_finite() || s <= 0.0) {
            return Err(Error::ZeroVariance(format!(
                "task {} has zero trace ratio",
                i + 1
            )));
        }
    }
    let blocks = (0..dataset.k())
        .map(|i| {
            (0..dataset.m())
                .map(|j| dataset.block(i, j) / scales[i])
                .collect()
        })
        .collect();
    Ok((MtlDataset { p: dataset.p(), blocks }, scales))
}

/// Center, then normalize. The returned record holds the task means of the
/// *original* data and the applied scales, so test points can be mapped into
/// the same space.
pub fn preprocess(dataset: &MtlDataset, mode: NormMode) -> Result<Preprocessed> {
    let (centered, means) = center_tasks(dataset);
    let (data, scales) = normalize_tasks(&centered, mode)?;
    Ok(Preprocessed {
        data,
        record: Preprocessing {
            task_means: means,
            task_scales: scales,
        },
    })
}

impl Preprocessed {
    /// Map a raw test point into the preprocessed space of task `i`.
    pub fn transform_test(&self, x: &DVector<f64>, task: usize) -> Result<DVector<f64>> {
        if x.len() != self.data.p() {
            return Err(Error::DimensionMismatch(format!(
                "test point has length {}, expected {}",
                x.len(),
                self.data.p()
            )));
        }
        Ok((x - &self.record.task_means[task]) / self.record.task_scales[task])
    }
}

/// Multiply-capable view of the stacked block-diagonal data matrix
/// Z = blockdiag(X_1, ..., X_k) and of A = (D_gamma + lambda 1 1^T) (x) I_p.
/// A products exploit the Kronecker structure: O(k^2 p) per multiply.
pub struct BlockOperator<'a> {
    data: &'a MtlDataset,
    coupling: DMatrix<f64>,
}

pub fn assemble_block_diagonal<'a>(
    data: &'a MtlDataset,
    hyper: &Hyperparams,
) -> BlockOperator<'a> {
    BlockOperator {
        data,
        coupling: hyper.coupling(),
    }
}

impl<'a> BlockOperator<'a> {
    pub fn kp(&self) -> usize {
        self.data.k() * self.data.p()
    }

    /// Z v for v of length n.
    pub fn z_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let (k, p) = (self.data.k(), self.data.p());
        let mut out = DVector::zeros(k * p);
        let mut col = 0;
        for i in 0..k {
            let n_i = self.data.task_count(i);
            let xi = self.data.task_matrix(i);
            let seg = v.rows(col, n_i).into_owned();
            out.rows_mut(i * p, p).copy_from(&(&xi * seg));
            col += n_i;
        }
        out
    }

    /// Z^T u for u of length kp.
    pub fn zt_mul(&self, u: &DVector<f64>) -> DVector<f64> {
        let (k, p) = (self.data.k(), self.data.p());
        let mut out = DVector::zeros(self.data.n());
        let mut col = 0;
        for i in 0..k {
            let n_i = self.data.task_count(i);
            let xi = self.data.task_matrix(i);
            let seg = u.rows(i * p, p).into_owned();
            out.rows_mut(col, n_i).copy_from(&(xi.transpose() * seg));
            col += n_i;
        }
        out
    }

    /// A u for u of length kp, using the k x k factor on p-blocks.
    pub fn a_mul(&self, u: &DVector<f64>) -> DVector<f64> {
        let (k, p) = (self.data.k(), self.data.p());
        let mut out = DVector::zeros(k * p);
        for r in 0..k {
            let mut acc = DVector::zeros(p);
            for s in 0..k {
                acc.axpy(self.coupling[(r, s)], &u.rows(s * p, p).into_owned(), 1.0);
            }
            out.rows_mut(r * p, p).copy_from(&acc);
        }
        out
    }

    /// Dense Z, for small-instance verification only.
    pub fn dense_z(&self) -> DMatrix<f64> {
        let (k, p) = (self.data.k(), self.data.p());
        let mut z = DMatrix::zeros(k * p, self.data.n());
        let mut col = 0;
        for i in 0..k {
            let xi = self.data.task_matrix(i);
            z.view_mut((i * p, col), (p, xi.ncols())).copy_from(&xi);
            col += xi.ncols();
        }
        z
    }

    /// Dense A, for small-instance verification only.
    pub fn dense_a(&self) -> DMatrix<f64> {
        let (k, p) = (self.data.k(), self.data.p());
        let mut a = DMatrix::zeros(k * p, k * p);
        for r in 0..k {
            for s in 0..k {
                for d in 0..p {
                    a[(r * p + d, s * p + d)] = self.coupling[(r, s)];
                }
            }
        }
        a
    }
}
