//! Damped Newton minimizer for small smooth problems.
//!
//! Steps solve `(H + mu D) delta = -g`, where `H` is the exact Hessian and
//! `D` the diagonal of the Gauss-Newton matrix. The damping `mu` is raised
//! until the system is positive definite and the step decreases the
//! objective, and lowered after each successful step so the iteration ends
//! with undamped Newton steps.

use nalgebra::{DMatrix, DVector};

use crate::Result;

#[derive(Debug, Clone)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub gauss_newton: DMatrix<f64>,
    /// Size of the rounding error in `gradient`; convergence is declared
    /// once the gradient is below `max(grad_tol, gradient_floor)`.
    pub gradient_floor: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `value` starting at `x0`. `derivs` returns the objective with
/// its gradient and Hessians at a point; `value` evaluates the objective
/// alone and may fail for infeasible points, which are treated as uphill.
pub fn minimize<V, D>(x0: DVector<f64>, value: V, derivs: D, opts: MinimizeOptions) -> Result<Minimum>
where
    V: Fn(&DVector<f64>) -> Result<f64>,
    D: Fn(&DVector<f64>) -> Result<Derivatives>,
{
    let n = x0.len();
    let mut x = x0;
    let mut d = derivs(&x)?;
    let mut mu = 0.0;
    let mut iterations = 0;
    if n == 0 {
        return Ok(Minimum { x, value: d.value, grad_norm: 0.0, iterations, converged: true });
    }
    while iterations < opts.max_iter {
        let grad_norm = d.gradient.norm();
        if grad_norm < opts.grad_tol.max(d.gradient_floor) {
            // The gradient test bounds the error in x only through the
            // curvature, which can be tiny; one more Newton step squares it.
            if let Some(chol) = d.hessian.clone().cholesky() {
                let trial = &x - chol.solve(&d.gradient);
                if let Ok(t) = derivs(&trial) {
                    let g = t.gradient.norm();
                    if t.value <= d.value + 1e-13 * (1.0 + d.value.abs()) && g <= grad_norm {
                        return Ok(Minimum { x: trial, value: t.value, grad_norm: g, iterations, converged: true });
                    }
                }
            }
            return Ok(Minimum { x, value: d.value, grad_norm, iterations, converged: true });
        }
        iterations += 1;
        let scale = d.gauss_newton.diagonal().amax().max(f64::MIN_POSITIVE);
        let diag = d.gauss_newton.diagonal().map(|v| v.max(1e-12 * scale));
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = d.hessian.clone();
            for i in 0..n {
                a[(i, i)] += mu * diag[i];
            }
            let Some(chol) = a.cholesky() else {
                mu = (mu * 4.0).max(1e-6);
                continue;
            };
            let step = -chol.solve(&d.gradient);
            let predicted = -(d.gradient.dot(&step) + 0.5 * step.dot(&(&d.hessian * &step)));
            let trial = &x + &step;
            let tiny = predicted.abs() <= 1e-13 * (1.0 + d.value.abs());
            let ok = match value(&trial) {
                Ok(v) => v < d.value || (tiny && v <= d.value + 1e-13 * (1.0 + d.value.abs())),
                Err(_) => false,
            };
            if ok {
                if trial == x {
                    break;
                }
                x = trial;
                accepted = true;
                mu = if mu < 1e-9 { 0.0 } else { mu / 3.0 };
                break;
            }
            mu = (mu * 4.0).max(1e-6);
        }
        if !accepted {
            break;
        }
        d = derivs(&x)?;
    }
    let grad_norm = d.gradient.norm();
    Ok(Minimum {
        converged: grad_norm < opts.grad_tol.max(d.gradient_floor),
        x,
        value: d.value,
        grad_norm,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> Derivatives {
        let (a, b) = (x[0], x[1]);
        let value = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let gradient = DVector::from_vec(vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]);
        let hessian = DMatrix::from_row_slice(
            2,
            2,
            &[2.0 - 400.0 * (b - 3.0 * a * a), -400.0 * a, -400.0 * a, 200.0],
        );
        // Residuals (1 - a, 10 (b - a²)).
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * a, 10.0]);
        Derivatives { value, gradient, hessian, gauss_newton: j.transpose() * j * 2.0, gradient_floor: 0.0 }
    }

    #[test]
    fn rosenbrock_converges() {
        let m = minimize(
            DVector::from_vec(vec![-1.2, 1.0]),
            |x| Ok(rosenbrock(x).value),
            |x| Ok(rosenbrock(x)),
            MinimizeOptions::default(),
        )
        .unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-8 && (m.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn indefinite_start_on_quartic() {
        // f = x^4/4 - x^2/2 + y^2 has minima at x = ±1.
        let f = |x: &DVector<f64>| x[0].powi(4) / 4.0 - x[0] * x[0] / 2.0 + x[1] * x[1];
        let m = minimize(
            DVector::from_vec(vec![0.1, 1.0]),
            |x| Ok(f(x)),
            |x| {
                Ok(Derivatives {
                    value: f(x),
                    gradient: DVector::from_vec(vec![x[0].powi(3) - x[0], 2.0 * x[1]]),
                    hessian: DMatrix::from_diagonal(&DVector::from_vec(vec![3.0 * x[0] * x[0] - 1.0, 2.0])),
                    gauss_newton: DMatrix::identity(2, 2),
                    gradient_floor: 0.0,
                })
            },
            MinimizeOptions::default(),
        )
        .unwrap();
        assert!(m.converged);
        assert!((m.x[0].abs() - 1.0).abs() < 1e-9);
    }
}
