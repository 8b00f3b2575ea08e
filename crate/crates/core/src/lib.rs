//! Multi-task least-squares SVM with deterministic performance prediction.
//!
//! The crate trains coupled ridge-style classifiers over several related
//! tasks, predicts the Gaussian law of their outputs from small-dimensional
//! deterministic statistics, and uses those predictions to pick input scores
//! (labels), decision thresholds and hyperparameters — no cross validation
//! anywhere. Synthetic benchmarks and a CSV/JSON experiment surface live in
//! [`synth`], [`io`] and [`experiments`].

pub mod classify;
pub mod error;
pub mod experiments;
pub mod general;
pub mod io;
pub mod isotropic;
pub mod labels;
pub mod linalg;
pub mod model;
pub mod prediction;
pub mod solver;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    assemble_block_diagonal, center_tasks, normalize_tasks, preprocess, ClassProportions,
    Hyperparams, MtlDataset, NormMode, Preprocessed, ScoreAssignment,
};
pub use solver::{primal_oracle, score, solve_dual, DualSolution, SolverContext};
