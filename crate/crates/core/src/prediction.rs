//! Predicted Gaussian law of the classifier output, one entry per
//! (task, class) pair of the test point's origin.

use nalgebra::{DMatrix, DVector};

use crate::model::ClassProportions;

#[derive(Debug, Clone)]
pub struct ScorePrediction {
    pub props: ClassProportions,
    /// km x q predicted means: row = flat (task, class) of the test point,
    /// column = classifier output (q = 1 in binary mode).
    pub means: DMatrix<f64>,
    /// Per flat (task, class): q x q covariance of the output vector.
    pub covs: Vec<DMatrix<f64>>,
    /// In the identity-covariance binary regime the variance depends on the
    /// task only; stored once per task.
    pub iso_variance: Option<DVector<f64>>,
}

impl ScorePrediction {
    pub fn mean(&self, i: usize, j: usize, out: usize) -> f64 {
        self.means[(self.props.flat(i, j), out)]
    }

    /// Scalar variance in binary mode.
    pub fn variance(&self, i: usize, j: usize) -> f64 {
        self.covs[self.props.flat(i, j)][(0, 0)]
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        self.variance(i, j).sqrt()
    }
}
