//! The partially separable loss family: per-sample losses of the linear
//! predictor plus an L2 regularizer, its block partial gradients computed
//! from summed intermediate values, full-batch oracles, Lipschitz-constant
//! estimation, and the step-size feasibility bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, PartitionPlan};
use crate::matrix::{self, dot, Matrix};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("logistic label {value} at row {row} is outside {{0, 1}}")]
    LabelDomain { row: usize, value: f64 },
    #[error("power iteration failed tolerance after {0} iterations")]
    NotConverged(usize),
    #[error("exact eigendecomposition limited to 512 columns, got {0}")]
    ExactDimTooLarge(usize),
}

/// Supported loss families. Both use a scalar per-sample link (r = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Ridge,
    Logistic,
}

/// Loss family plus regularization weight.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    /// Regularization weight, >= 0.
    pub lambda: f64,
    /// Dimension of the per-sample intermediate value.
    pub link_dim: usize,
}

impl LossSpec {
    pub fn ridge(lambda: f64) -> Self {
        assert!(lambda.is_finite() && lambda >= 0.0);
        Self {
            family: LossFamily::Ridge,
            lambda,
            link_dim: 1,
        }
    }

    pub fn logistic(lambda: f64) -> Self {
        assert!(lambda.is_finite() && lambda >= 0.0);
        Self {
            family: LossFamily::Logistic,
            lambda,
            link_dim: 1,
        }
    }

    /// Derivative of the per-sample loss with respect to the linear
    /// predictor `z`.
    #[inline]
    pub fn link_derivative(&self, z: f64, y: f64) -> f64 {
        match self.family {
            LossFamily::Ridge => z - y,
            LossFamily::Logistic => sigmoid(z) - y,
        }
    }

    /// Per-sample loss value at predictor `z`.
    #[inline]
    pub fn sample_loss(&self, z: f64, y: f64) -> f64 {
        match self.family {
            LossFamily::Ridge => {
                let r = z - y;
                0.5 * r * r
            }
            LossFamily::Logistic => softplus(z) - y * z,
        }
    }

    /// Upper bound on the second derivative of the per-sample loss in `z`.
    fn curvature_bound(&self) -> f64 {
        match self.family {
            LossFamily::Ridge => 1.0,
            LossFamily::Logistic => 0.25,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Per-sample partial predictions of one feature block: row `p` of the
/// output is `features_block[p] . theta_block`. This is the only payload
/// that ever crosses silo boundaries.
pub fn predict_partial(features_block: &Matrix, theta_block: &[f64]) -> Result<Matrix, LossError> {
    if features_block.n_cols() != theta_block.len() {
        return Err(LossError::DimensionMismatch(format!(
            "block has {} columns, theta has {}",
            features_block.n_cols(),
            theta_block.len()
        )));
    }
    let values = features_block.matvec(theta_block);
    Ok(Matrix::from_vec(values.len(), 1, values))
}

/// Full-batch objective over all M samples.
pub fn full_loss(spec: &LossSpec, ds: &Dataset, theta: &[f64]) -> f64 {
    assert_eq!(theta.len(), ds.n_features(), "theta length mismatch");
    let m = ds.n_samples() as f64;
    let mut data_term = 0.0;
    for r in 0..ds.n_samples() {
        let z = dot(ds.features.row(r), theta);
        data_term += spec.sample_loss(z, ds.labels[r]);
    }
    data_term / m + 0.5 * spec.lambda * matrix::norm2_sq(theta)
}

/// Block partial gradient from a client's rows and the summed stale
/// intermediate values of the other blocks.
///
/// The predictor mixes the caller's fresh `theta_block` with the stale
/// `phi_other` sums: `z_p = phi_other[p] + x_p . theta_block`. Averaging is
/// over this client's own sample count; an empty batch contributes only the
/// regularizer term.
pub fn partial_gradient(
    spec: &LossSpec,
    features_rows: &Matrix,
    labels_rows: &[f64],
    theta_block: &[f64],
    phi_other: &Matrix,
) -> Result<Vec<f64>, LossError> {
    let b = features_rows.n_rows();
    if features_rows.n_cols() != theta_block.len() {
        return Err(LossError::DimensionMismatch(format!(
            "rows have {} columns, theta has {}",
            features_rows.n_cols(),
            theta_block.len()
        )));
    }
    if labels_rows.len() != b || phi_other.n_rows() != b {
        return Err(LossError::DimensionMismatch(format!(
            "{} feature rows, {} labels, {} phi rows",
            b,
            labels_rows.len(),
            phi_other.n_rows()
        )));
    }
    if b == 0 {
        return Ok(theta_block.iter().map(|t| spec.lambda * t).collect());
    }
    if spec.family == LossFamily::Logistic {
        for (row, &y) in labels_rows.iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(LossError::LabelDomain { row, value: y });
            }
        }
    }
    let mut sum = vec![0.0; theta_block.len()];
    for p in 0..b {
        let row = features_rows.row(p);
        let z = phi_other.get(p, 0) + dot(row, theta_block);
        let fp = spec.link_derivative(z, labels_rows[p]);
        for (s, x) in sum.iter_mut().zip(row) {
            *s += fp * x;
        }
    }
    let count = b as f64;
    Ok(sum
        .iter()
        .zip(theta_block)
        .map(|(s, t)| s / count + spec.lambda * t)
        .collect())
}

/// Exact gradient of [`full_loss`] over all M samples.
pub fn full_gradient(spec: &LossSpec, ds: &Dataset, theta: &[f64]) -> Vec<f64> {
    assert_eq!(theta.len(), ds.n_features(), "theta length mismatch");
    let m = ds.n_samples();
    let mut sum = vec![0.0; theta.len()];
    for r in 0..m {
        let row = ds.features.row(r);
        let z = dot(row, theta);
        let fp = spec.link_derivative(z, ds.labels[r]);
        for (s, x) in sum.iter_mut().zip(row) {
            *s += fp * x;
        }
    }
    let count = m as f64;
    sum.iter()
        .zip(theta)
        .map(|(s, t)| s / count + spec.lambda * t)
        .collect()
}

/// How to obtain the spectral quantities behind the Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMethod {
    /// Full symmetric eigendecomposition of the Gram matrix (D <= 512).
    Exact,
    /// Power iteration until the eigenvalue estimate's relative change
    /// drops below `tol`; the result is inflated by 1% to stay an upper
    /// bound.
    PowerIteration { iters: usize, tol: f64 },
}

/// Gradient Lipschitz constants: the global constant plus one per block.
#[derive(Debug, Clone)]
pub struct LipschitzInfo {
    pub l: f64,
    pub l_blocks: Vec<f64>,
    pub l_max: f64,
    pub method: LipschitzMethod,
}

/// Estimate the global and per-block gradient Lipschitz constants.
///
/// For the data term the global constant is `lambda_max(X^T X) / M` and
/// block `j` uses the operator-norm upper bound `|X_(j)| * |X| / M`; the
/// logistic family scales the data term by its curvature bound 1/4 and the
/// regularizer adds `lambda` to every constant.
pub fn estimate_lipschitz(
    spec: &LossSpec,
    ds: &Dataset,
    plan: &PartitionPlan,
    method: LipschitzMethod,
) -> Result<LipschitzInfo, LossError> {
    let m = ds.n_samples() as f64;
    let scale = spec.curvature_bound();
    let lambda_max = top_eigenvalue(&ds.features, method)?;
    let spectral_norm = lambda_max.sqrt();
    let l = scale * lambda_max / m + spec.lambda;
    let mut l_blocks = Vec::with_capacity(plan.n_silos);
    for &(start, end) in &plan.vertical_blocks {
        let block = ds.features.column_block(start, end);
        let block_norm = top_eigenvalue(&block, method)?.sqrt();
        l_blocks.push(scale * block_norm * spectral_norm / m + spec.lambda);
    }
    let l_max = l_blocks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(LipschitzInfo {
        l,
        l_blocks,
        l_max,
        method,
    })
}

fn top_eigenvalue(x: &Matrix, method: LipschitzMethod) -> Result<f64, LossError> {
    match method {
        LipschitzMethod::Exact => {
            if x.n_cols() > 512 {
                return Err(LossError::ExactDimTooLarge(x.n_cols()));
            }
            let eig = matrix::symmetric_eigenvalues(&x.gram());
            Ok(eig.into_iter().fold(0.0, f64::max))
        }
        LipschitzMethod::PowerIteration { iters, tol } => {
            let d = x.n_cols();
            let mut v = vec![1.0 / (d as f64).sqrt(); d];
            let mut estimate = 0.0;
            for _ in 0..iters {
                let u = x.matvec(&v);
                let w = x.matvec_transpose(&u);
                let next = dot(&v, &w);
                let norm = matrix::norm2(&w);
                if norm == 0.0 {
                    // Zero data matrix: the data-term constant is zero.
                    return Ok(0.0);
                }
                for (vi, wi) in v.iter_mut().zip(&w) {
                    *vi = wi / norm;
                }
                if (next - estimate).abs() <= tol * next.abs() {
                    return Ok(1.01 * next);
                }
                estimate = next;
            }
            Err(LossError::NotConverged(iters))
        }
    }
}

/// Largest step size satisfying `1 - eta*L - eta^2*Lmax^2*Q^2 >= 0`; every
/// step size in `(0, eta_star]` keeps the condition nonnegative.
pub fn max_step_size(info: &LipschitzInfo, local_steps: usize) -> f64 {
    assert!(info.l > 0.0 && info.l_max > 0.0 && local_steps >= 1);
    let q = local_steps as f64;
    let a = info.l_max * info.l_max * q * q;
    // Conjugate form of the positive quadratic root, stable when 4a << L^2.
    2.0 / (info.l + (info.l * info.l + 4.0 * a).sqrt())
}
