//! Levenberg-Marquardt with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

/// A least-squares problem over an unconstrained parameter vector.
pub(crate) trait LeastSquares: Sync {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Writes residuals and the Jacobian (row per residual). Returns `false`
    /// when `x` lies outside the model's domain.
    fn evaluate(&self, x: &[f64], residuals: &mut [f64], jacobian: Option<&mut DMatrix<f64>>) -> bool;
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub converged: bool,
}

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-15;
/// Consecutive accepted steps below the relative-decrease tolerance.
const SMALL_STEPS_TO_CONVERGE: usize = 3;

pub(crate) fn minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    max_iterations: usize,
    tol: f64,
) -> Option<Outcome> {
    let m = problem.n_residuals();
    let k = problem.n_params();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    let mut jac = DMatrix::<f64>::zeros(m, k);
    if !problem.evaluate(&x, &mut r, Some(&mut jac)) {
        return None;
    }
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return None;
    }

    let mut trial = vec![0.0; m];
    let mut x_trial = vec![0.0; k];
    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut small_steps = 0;

    for _ in 0..max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        if grad.amax() == 0.0 {
            converged = true;
            break;
        }
        let diag_floor = jtj.diagonal().amax().max(f64::MIN_POSITIVE) * 1e-12;

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            for i in 0..k {
                x_trial[i] = x[i] + step[i];
            }
            if x_trial.iter().all(|v| v.is_finite()) && problem.evaluate(&x_trial, &mut trial, None) {
                let new_cost = sum_sq(&trial);
                if new_cost.is_finite() && new_cost < cost {
                    let rel = (cost - new_cost) / cost;
                    x.copy_from_slice(&x_trial);
                    cost = new_cost;
                    problem.evaluate(&x, &mut r, Some(&mut jac));
                    lambda = (lambda / 3.0).max(LAMBDA_MIN);
                    accepted = true;
                    small_steps = if rel < tol { small_steps + 1 } else { 0 };
                    converged = small_steps >= SMALL_STEPS_TO_CONVERGE;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction left at machine precision: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    Some(Outcome { x, cost, converged })
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}
