//! Levenberg–Marquardt damped least squares with Marquardt diagonal
//! scaling, shared by the tomography reconstruction and the curve fits.

use nalgebra::{DMatrix, DVector};

/// A nonlinear least-squares problem `min Σ r_i(x)²`.
pub trait LeastSquaresProblem {
    fn residuals(&self, x: &[f64]) -> Vec<f64>;
    /// Row `i`, column `j`: `∂r_i/∂x_j`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost reduction below which an accepted step counts as converged.
    pub ftol: f64,
    /// Relative step length below which the iteration stops.
    pub xtol: f64,
    /// Gradient infinity norm below which the iteration stops.
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            ftol: 1e-14,
            xtol: 1e-14,
            gtol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `Σ r²` at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    options: &LmOptions,
) -> LmReport {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = problem.residuals(&x);
    let mut cost = sum_sq(&r);
    if n == 0 || !cost.is_finite() {
        return LmReport {
            params: x,
            cost,
            iterations: 0,
            converged: n == 0,
        };
    }
    let mut lambda = -1.0;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut need_jacobian = true;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);

    while iterations < options.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        if need_jacobian {
            let j = problem.jacobian(&x);
            let rv = DVector::from_column_slice(&r);
            a = j.transpose() * &j;
            g = j.transpose() * rv;
            need_jacobian = false;
            if g.amax() <= options.gtol * cost.sqrt().max(1.0) {
                converged = true;
                break;
            }
        }
        let scale_floor = 1e-12 * (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max).max(1e-300);
        if lambda < 0.0 {
            lambda = 1e-3;
        }
        iterations += 1;

        let mut damped = a.clone();
        for i in 0..n {
            damped[(i, i)] += lambda * a[(i, i)].max(scale_floor);
        }
        let step = match damped.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match damped.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= nu;
                    nu *= 2.0;
                    continue;
                }
            },
        };

        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, s)| xi + s).collect();
        let r_trial = problem.residuals(&trial);
        let cost_trial = sum_sq(&r_trial);
        // Predicted reduction of the quadratic model.
        let predicted = -(2.0 * g.dot(&step) + step.dot(&(&a * &step)));

        if cost_trial.is_finite() && cost_trial < cost {
            let rho = if predicted > 0.0 {
                (cost - cost_trial) / predicted
            } else {
                1.0
            };
            let relative_drop = (cost - cost_trial) / cost;
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small_step = step.norm() <= options.xtol * (x_norm + options.xtol);
            x = trial;
            r = r_trial;
            cost = cost_trial;
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            need_jacobian = true;
            if relative_drop <= options.ftol || small_step {
                converged = true;
                break;
            }
        } else {
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if step.norm() <= options.xtol * (x_norm + options.xtol) {
                converged = true;
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() || lambda > 1e30 {
                // No descent direction left at machine precision.
                converged = true;
                break;
            }
        }
    }

    LmReport {
        params: x,
        cost,
        iterations,
        converged,
    }
}
