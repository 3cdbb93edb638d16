//! Damped Newton minimization over a coordinate subset.
//!
//! Shared by the quasi-likelihood maximizers and the second stage of the
//! two-stage estimator. The Levenberg shift is doubled until a descent step is
//! found; coordinates outside the free set stay fixed at their start values.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

/// A twice-differentiable loss to minimize over a box.
///
/// Implementations must provide exact first and second derivatives; the
/// gradient is expected to match finite differences of `eval` and the Hessian
/// to be symmetric. `eval_guarded` is used inside line searches and may clamp
/// its internals to avoid overflow; the flag reports whether clamping fired.
pub trait Loss: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, theta: &DVector<f64>) -> f64;
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64>;

    fn eval_guarded(&self, theta: &DVector<f64>) -> (f64, bool) {
        (self.eval(theta), false)
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.gradient(theta), self.hessian(theta))
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Convergence threshold on the Euclidean norm of the restricted gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { grad_tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub theta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Whether the overflow guard fired in any line-search evaluation.
    pub clamped: bool,
}

fn restricted_norm(grad: &DVector<f64>, free: &[bool]) -> f64 {
    grad.iter()
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|(g, _)| g * g)
        .sum::<f64>()
        .sqrt()
}

fn clip(theta: &mut DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>, free: &[bool]) {
    for j in 0..theta.len() {
        if free[j] {
            theta[j] = theta[j].clamp(lower[j], upper[j]);
        }
    }
}

/// Minimizes `loss` over the coordinates flagged in `free`, holding the
/// remaining coordinates fixed at their start values, inside the box.
pub fn minimize_restricted(
    loss: &dyn Loss,
    start: &DVector<f64>,
    free: &[bool],
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonReport> {
    let p = loss.dim();
    if start.len() != p || free.len() != p || lower.len() != p || upper.len() != p {
        return Err(Error::invalid("minimize_restricted: dimension mismatch"));
    }
    let free_idx: Vec<usize> = (0..p).filter(|&j| free[j]).collect();
    if free_idx.is_empty() {
        return Err(Error::invalid("minimize_restricted: no free coordinates"));
    }

    let mut theta = start.clone();
    clip(&mut theta, lower, upper, free);
    let (mut fval, mut clamped) = loss.eval_guarded(&theta);
    if !fval.is_finite() {
        return Err(Error::numerical("loss is not finite at the start point"));
    }

    let k = free_idx.len();
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let (grad, hess) = loss.gradient_hessian(&theta);
        let gnorm = restricted_norm(&grad, free);
        if gnorm < opts.grad_tol {
            return Ok(NewtonReport { theta, converged: true, iterations, grad_norm: gnorm, clamped });
        }
        iterations += 1;

        let gfree = DVector::from_iterator(k, free_idx.iter().map(|&j| grad[j]));
        let hfree = DMatrix::from_fn(k, k, |a, b| hess[(free_idx[a], free_idx[b])]);
        let scale = hfree.diagonal().iter().fold(1e-12f64, |m, d| m.max(d.abs()));

        let mut lambda = 0.0f64;
        let mut accepted = false;
        loop {
            let mut damped = hfree.clone();
            for a in 0..k {
                damped[(a, a)] += lambda;
            }
            if let Some(chol) = Cholesky::new(damped) {
                let step = chol.solve(&(-&gfree));
                let mut cand = theta.clone();
                for (a, &j) in free_idx.iter().enumerate() {
                    cand[j] += step[a];
                }
                clip(&mut cand, lower, upper, free);
                let (fc, cl) = loss.eval_guarded(&cand);
                clamped |= cl;
                // In the terminal regime the true decrease of an undamped
                // Newton step falls below evaluation rounding; accept it
                // unconditionally there, as the descent test is pure noise.
                let terminal = lambda == 0.0
                    && step.norm() <= 1e-6 * (1.0 + theta.norm())
                    && fc.is_finite();
                if (fc.is_finite() && fc < fval) || terminal {
                    theta = cand;
                    fval = fc;
                    accepted = true;
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-8 * scale } else { 2.0 * lambda };
            if lambda > 1e12 * scale {
                break;
            }
        }
        if !accepted {
            // No descent step exists up to the damping cap; report the best
            // iterate without claiming convergence.
            let grad = loss.gradient(&theta);
            let gnorm = restricted_norm(&grad, free);
            return Ok(NewtonReport { theta, converged: false, iterations, grad_norm: gnorm, clamped });
        }
    }
    let grad = loss.gradient(&theta);
    let gnorm = restricted_norm(&grad, free);
    Ok(NewtonReport { theta, converged: gnorm < opts.grad_tol, iterations, grad_norm: gnorm, clamped })
}

/// Convenience wrapper with every coordinate free.
pub fn minimize(
    loss: &dyn Loss,
    start: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonReport> {
    let free = vec![true; loss.dim()];
    minimize_restricted(loss, start, &free, lower, upper, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Convex quadratic (theta - c)' A (theta - c) for testing.
    pub struct Quadratic {
        pub a: DMatrix<f64>,
        pub center: DVector<f64>,
    }

    impl Loss for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn eval(&self, theta: &DVector<f64>) -> f64 {
            let d = theta - &self.center;
            (&self.a * &d).dot(&d)
        }
        fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
            2.0 * &self.a * (theta - &self.center)
        }
        fn hessian(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
            2.0 * self.a.clone()
        }
    }

    #[test]
    fn quadratic_minimized_in_one_step() {
        let a = DMatrix::from_vec(2, 2, vec![2.0, 0.3, 0.3, 1.0]);
        let loss = Quadratic { a, center: DVector::from_vec(vec![0.5, -1.0]) };
        let report = minimize(
            &loss,
            &DVector::zeros(2),
            &DVector::from_element(2, -10.0),
            &DVector::from_element(2, 10.0),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert!((report.theta[0] - 0.5).abs() < 1e-10);
        assert!((report.theta[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn restriction_keeps_fixed_coordinates() {
        let a = DMatrix::from_vec(2, 2, vec![2.0, 0.9, 0.9, 1.0]);
        let loss = Quadratic { a, center: DVector::from_vec(vec![1.0, 1.0]) };
        let start = DVector::from_vec(vec![0.0, 0.0]);
        let report = minimize_restricted(
            &loss,
            &start,
            &[true, false],
            &DVector::from_element(2, -10.0),
            &DVector::from_element(2, 10.0),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert_eq!(report.theta[1], 0.0);
        // Restricted objective 2(t-1)^2 - 1.8(t-1) + 1 has its minimum at 1.45.
        assert!((report.theta[0] - 1.45).abs() < 1e-8);
    }

    #[test]
    fn box_constrained_stall_reports_not_converged() {
        // Minimum outside the box: the line search stalls on the boundary.
        let a = DMatrix::from_vec(1, 1, vec![1.0]);
        let loss = Quadratic { a, center: DVector::from_vec(vec![5.0]) };
        let report = minimize(
            &loss,
            &DVector::zeros(1),
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(!report.converged);
        assert_eq!(report.theta[0], 1.0);
    }
}
