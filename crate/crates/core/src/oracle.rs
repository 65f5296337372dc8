//! Independent reference implementations used by tests and the CLI's
//! verify mode: centralized gradient descent, centralized minibatch SGD,
//! and a finite-difference gradient checker.
//!
//! Nothing in the round engine calls into this module; the point is that
//! the checker stays independent of the thing it checks. Everything here is
//! single-threaded and favors obviously-correct loops over speed.

use crate::data::{make_partition, Dataset, RowScheme};
use crate::loss::{full_gradient, full_loss, LossSpec};
use crate::matrix::dot;
use crate::protocol::{MinibatchSchedule, Sampling};

/// Step-by-step record of a reference run.
#[derive(Debug, Clone)]
pub struct OracleTrace {
    /// Model after 0, 1, ..., `steps` updates.
    pub iterates: Vec<Vec<f64>>,
    /// `full_loss` at each iterate.
    pub losses: Vec<f64>,
    /// Sample indices consumed at each step (empty for full-batch descent).
    pub rng_log: Vec<Vec<usize>>,
}

/// Plain full-batch gradient descent.
pub fn centralized_gd(
    spec: &LossSpec,
    ds: &Dataset,
    eta: f64,
    steps: usize,
    init: &[f64],
) -> OracleTrace {
    assert!(eta > 0.0);
    let mut theta = init.to_vec();
    let mut iterates = vec![theta.clone()];
    let mut losses = vec![full_loss(spec, ds, &theta)];
    for _ in 0..steps {
        let g = full_gradient(spec, ds, &theta);
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= eta * gi;
        }
        iterates.push(theta.clone());
        losses.push(full_loss(spec, ds, &theta));
    }
    OracleTrace {
        iterates,
        losses,
        rng_log: vec![Vec::new(); steps],
    }
}

/// Centralized minibatch SGD whose index sampling consumes the same
/// generator stream as the round engine's schedule for a single silo with
/// a single client, so traces line up step for step.
pub fn centralized_sgd(
    spec: &LossSpec,
    ds: &Dataset,
    eta: f64,
    steps: usize,
    batch_size: usize,
    seed: u64,
    init: &[f64],
) -> OracleTrace {
    assert!(batch_size >= 1 && batch_size <= ds.n_samples());
    let plan = make_partition(
        ds.n_samples(),
        ds.n_features(),
        1,
        1,
        None,
        RowScheme::Contiguous,
        None,
    )
    .expect("single-client plan");
    let mut theta = init.to_vec();
    let mut iterates = vec![theta.clone()];
    let mut losses = vec![full_loss(spec, ds, &theta)];
    let mut rng_log = Vec::with_capacity(steps);
    for step in 0..steps {
        let schedule =
            MinibatchSchedule::draw(seed, step as u64, 1, batch_size, Sampling::Stratified, &plan)
                .expect("schedule");
        let batch = &schedule.batches[0];
        // Naive minibatch gradient, summed in batch order.
        let mut sum = vec![0.0; theta.len()];
        for &p in batch {
            let row = ds.features.row(p);
            let z = dot(row, &theta);
            let fp = spec.link_derivative(z, ds.labels[p]);
            for (s, x) in sum.iter_mut().zip(row) {
                *s += fp * x;
            }
        }
        let count = batch.len() as f64;
        for (i, t) in theta.iter_mut().enumerate() {
            let g = sum[i] / count + spec.lambda * *t;
            *t -= eta * g;
        }
        rng_log.push(batch.clone());
        iterates.push(theta.clone());
        losses.push(full_loss(spec, ds, &theta));
    }
    OracleTrace {
        iterates,
        losses,
        rng_log,
    }
}

/// Central differences of [`full_loss`], coordinate by coordinate.
pub fn finite_diff_gradient(spec: &LossSpec, ds: &Dataset, theta: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = full_loss(spec, ds, &probe);
        probe[i] = theta[i] - h;
        let minus = full_loss(spec, ds, &probe);
        probe[i] = theta[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_regression;
    use crate::loss::{estimate_lipschitz, LipschitzMethod};
    use crate::matrix::{norm2, Matrix};

    #[test]
    fn gd_one_step_solves_identity_system() {
        // X = I2, y = 0, lambda = 0: L = 1/2, so eta = 1/L = 2 jumps to the
        // minimizer in one step.
        let ds = Dataset::new(Matrix::identity(2), vec![0.0, 0.0]);
        let trace = centralized_gd(&LossSpec::ridge(0.0), &ds, 2.0, 1, &[1.0, 1.0]);
        assert_eq!(trace.iterates[1], vec![0.0, 0.0]);
    }

    #[test]
    fn gd_losses_non_increasing_below_lipschitz_step() {
        let (ds, _) = synth_regression(8, 40, 5, 0.5);
        let plan = make_partition(40, 5, 1, 1, None, RowScheme::Contiguous, None).unwrap();
        let spec = LossSpec::ridge(0.1);
        let info = estimate_lipschitz(&spec, &ds, &plan, LipschitzMethod::Exact).unwrap();
        let trace = centralized_gd(&spec, &ds, 0.9 / info.l, 50, &vec![0.0; 5]);
        for w in trace.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn gd_zero_steps_keeps_only_init() {
        let (ds, _) = synth_regression(8, 10, 3, 0.0);
        let trace = centralized_gd(&LossSpec::ridge(0.0), &ds, 0.1, 0, &[0.0, 0.0, 0.0]);
        assert_eq!(trace.iterates.len(), 1);
        assert_eq!(trace.losses.len(), 1);
    }

    #[test]
    fn sgd_full_batch_reduces_to_gd_bitwise() {
        let (ds, _) = synth_regression(19, 16, 4, 0.3);
        let spec = LossSpec::ridge(0.05);
        let init = vec![0.0; 4];
        let gd = centralized_gd(&spec, &ds, 0.1, 20, &init);
        let sgd = centralized_sgd(&spec, &ds, 0.1, 20, 16, 77, &init);
        for (a, b) in gd.iterates.iter().zip(&sgd.iterates) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sgd_replays_identical_index_stream() {
        let (ds, _) = synth_regression(19, 20, 3, 0.1);
        let spec = LossSpec::ridge(0.0);
        let a = centralized_sgd(&spec, &ds, 0.05, 10, 4, 5, &[0.0; 3]);
        let b = centralized_sgd(&spec, &ds, 0.05, 10, 4, 5, &[0.0; 3]);
        assert_eq!(a.rng_log, b.rng_log);
        assert_eq!(a.iterates, b.iterates);
    }

    #[test]
    fn trace_losses_recompute_exactly() {
        let (ds, _) = synth_regression(23, 25, 4, 0.2);
        let spec = LossSpec::ridge(0.02);
        let trace = centralized_sgd(&spec, &ds, 0.05, 15, 5, 3, &[0.0; 4]);
        for (theta, loss) in trace.iterates.iter().zip(&trace.losses) {
            assert!((full_loss(&spec, &ds, theta) - loss).abs() <= 1e-12);
        }
    }

    #[test]
    fn finite_diff_matches_analytic_gradient_on_quadratic() {
        let (ds, w) = synth_regression(29, 12, 4, 0.6);
        let spec = LossSpec::ridge(0.3);
        let fd = finite_diff_gradient(&spec, &ds, &w, 1e-6);
        let exact = full_gradient(&spec, &ds, &w);
        for (a, b) in fd.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn finite_diff_near_zero_at_least_squares_solution() {
        let (ds, _) = synth_regression(3, 8, 3, 0.5);
        // Normal equations by pivoted elimination.
        let gram = ds.features.gram();
        let rhs = ds.features.matvec_transpose(&ds.labels);
        let d = 3;
        let mut a: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut row = gram.row(i).to_vec();
                row.push(rhs[i]);
                row
            })
            .collect();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let p = a[col][col];
            for r in 0..d {
                if r != col {
                    let f = a[r][col] / p;
                    for c in col..=d {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let solution: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
        let fd = finite_diff_gradient(&LossSpec::ridge(0.0), &ds, &solution, 1e-6);
        assert!(norm2(&fd) < 1e-5, "norm {}", norm2(&fd));
    }

    #[test]
    fn finite_diff_scalar_case() {
        // Single sample X = [2], y = 0: loss (1/2)(2 theta)^2, derivative
        // 4 theta.
        let ds = Dataset::new(Matrix::from_rows(&[vec![2.0]]), vec![0.0]);
        let fd = finite_diff_gradient(&LossSpec::ridge(0.0), &ds, &[1.0], 1e-6);
        assert!((fd[0] - 4.0).abs() < 1e-6);
    }
}
