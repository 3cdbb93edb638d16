//! Two-stage select-then-refit estimator.
//!
//! Stage one minimizes the separable penalized objective with identity
//! weighting matrix to pick the sparsity pattern; stage two refits the
//! supplied loss over the selected sub-model by damped Newton, leaving the
//! deselected coordinates at exactly zero.

use crate::error::Result;
use crate::lsa::{solve_separable, LsaProblem};
use crate::newton::{minimize_restricted, Loss, NewtonOptions};
use crate::penalty::{compute_weights, TuningConfig};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct PoResult {
    /// Indices selected as zeros in stage one.
    pub selected_zero_set: Vec<usize>,
    /// Refitted estimate; exactly zero on `selected_zero_set`.
    pub theta_check: DVector<f64>,
    pub refit_converged: bool,
    /// Gradient norm over the retained coordinates at the returned point.
    pub refit_gradient_norm: f64,
}

pub fn po_estimate(
    theta_tilde: &DVector<f64>,
    cfg: &TuningConfig,
    loss: &dyn Loss,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<PoResult> {
    let p = theta_tilde.len();
    let weights = compute_weights(theta_tilde, cfg)?;
    let problem = LsaProblem::new(
        theta_tilde.clone(),
        DMatrix::identity(p, p),
        weights,
        cfg.q,
        lower.clone(),
        upper.clone(),
    )?;
    let stage1 = solve_separable(&problem)?;

    let selected_zero_set: Vec<usize> =
        (0..p).filter(|&j| !stage1.active[j]).collect();
    if selected_zero_set.len() == p {
        // Degenerate full-shrinkage case: the restricted model contains only
        // the origin, so no refit runs.
        return Ok(PoResult {
            selected_zero_set,
            theta_check: DVector::zeros(p),
            refit_converged: true,
            refit_gradient_norm: 0.0,
        });
    }

    let report = minimize_restricted(
        loss,
        &stage1.theta_hat,
        &stage1.active,
        lower,
        upper,
        &NewtonOptions::default(),
    )?;
    Ok(PoResult {
        selected_zero_set,
        theta_check: report.theta,
        refit_converged: report.converged,
        refit_gradient_norm: report.grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result as CoreResult;
    use nalgebra::DMatrix;

    struct Quadratic {
        a: DMatrix<f64>,
        center: DVector<f64>,
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
        fn hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
            2.0 * self.a.clone()
        }
    }

    fn cfg(gamma: f64, r: f64, q: f64, rate: f64) -> TuningConfig {
        TuningConfig::new(gamma, r, q, rate).unwrap()
    }

    fn wide_box(p: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_element(p, -10.0), DVector::from_element(p, 10.0))
    }

    #[test]
    fn quadratic_refit_is_exact() -> CoreResult<()> {
        // True parameter (1, 0); the second coordinate's small initial
        // estimate draws a huge adaptive weight and is deselected.
        let loss = Quadratic {
            a: DMatrix::from_vec(2, 2, vec![2.0, 0.3, 0.3, 1.0]),
            center: DVector::from_vec(vec![1.0, 0.0]),
        };
        let theta_tilde = DVector::from_vec(vec![0.97, 0.004]);
        let (lo, hi) = wide_box(2);
        let res = po_estimate(&theta_tilde, &cfg(1.0, 1.2, 0.3, 0.1), &loss, &lo, &hi)?;
        assert_eq!(res.selected_zero_set, vec![1]);
        assert_eq!(res.theta_check[1], 0.0);
        assert!(res.refit_converged);
        // Restricted quadratic has its minimum at center restricted to coord 0.
        assert!((res.theta_check[0] - 1.0).abs() < 1e-8);
        Ok(())
    }

    #[test]
    fn full_shrinkage_returns_zero_without_refit() -> CoreResult<()> {
        let loss = Quadratic {
            a: DMatrix::identity(2, 2),
            center: DVector::from_vec(vec![5.0, 5.0]),
        };
        // rate close to 1 with r large makes alpha huge relative to the tiny
        // initial estimates, so everything is shrunk away.
        let theta_tilde = DVector::from_vec(vec![0.01, -0.02]);
        let (lo, hi) = wide_box(2);
        let res = po_estimate(&theta_tilde, &cfg(2.0, 1.0, 0.3, 0.9), &loss, &lo, &hi)?;
        assert_eq!(res.selected_zero_set, vec![0, 1]);
        assert_eq!(res.theta_check, DVector::zeros(2));
        assert!(res.refit_converged);
        assert_eq!(res.refit_gradient_norm, 0.0);
        Ok(())
    }

    #[test]
    fn zeros_stay_exactly_zero_through_refit() -> CoreResult<()> {
        let loss = Quadratic {
            a: DMatrix::from_vec(3, 3, vec![1.5, 0.2, 0.1, 0.2, 1.0, 0.3, 0.1, 0.3, 2.0]),
            center: DVector::from_vec(vec![2.0, -1.0, 0.0]),
        };
        let theta_tilde = DVector::from_vec(vec![1.9, -1.1, 0.03]);
        let (lo, hi) = wide_box(3);
        let res = po_estimate(&theta_tilde, &cfg(1.0, 1.2, 0.3, 0.15), &loss, &lo, &hi)?;
        assert_eq!(res.selected_zero_set, vec![2]);
        assert_eq!(res.theta_check[2].to_bits(), 0.0f64.to_bits());
        assert!(res.refit_converged);
        Ok(())
    }

    /// Loss wrapper that presents a permuted coordinate system.
    struct Permuted<'a> {
        inner: &'a Quadratic,
        perm: Vec<usize>,
    }

    impl Permuted<'_> {
        fn to_inner(&self, theta: &DVector<f64>) -> DVector<f64> {
            let mut out = DVector::zeros(theta.len());
            for (new_j, &old_j) in self.perm.iter().enumerate() {
                out[old_j] = theta[new_j];
            }
            out
        }
    }

    impl Loss for Permuted<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn eval(&self, theta: &DVector<f64>) -> f64 {
            self.inner.eval(&self.to_inner(theta))
        }
        fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
            let g = self.inner.gradient(&self.to_inner(theta));
            DVector::from_iterator(g.len(), self.perm.iter().map(|&old_j| g[old_j]))
        }
        fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
            let h = self.inner.hessian(&self.to_inner(theta));
            DMatrix::from_fn(h.nrows(), h.ncols(), |a, b| h[(self.perm[a], self.perm[b])])
        }
    }

    #[test]
    fn estimator_is_permutation_equivariant() -> CoreResult<()> {
        let quad = Quadratic {
            a: DMatrix::from_vec(3, 3, vec![1.5, 0.2, 0.1, 0.2, 1.0, 0.3, 0.1, 0.3, 2.0]),
            center: DVector::from_vec(vec![2.0, -1.0, 0.0]),
        };
        let theta_tilde = DVector::from_vec(vec![1.9, -1.1, 0.03]);
        let (lo, hi) = wide_box(3);
        let tuning = cfg(1.0, 1.2, 0.3, 0.15);
        let base = po_estimate(&theta_tilde, &tuning, &quad, &lo, &hi)?;

        let perm = vec![2usize, 0, 1]; // new coordinate j corresponds to old perm[j]
        let permuted_loss = Permuted { inner: &quad, perm: perm.clone() };
        let tilde_perm = DVector::from_iterator(3, perm.iter().map(|&old_j| theta_tilde[old_j]));
        let res = po_estimate(&tilde_perm, &tuning, &permuted_loss, &lo, &hi)?;

        for (new_j, &old_j) in perm.iter().enumerate() {
            assert!((res.theta_check[new_j] - base.theta_check[old_j]).abs() < 1e-9);
        }
        let mut expected_zeros: Vec<usize> = base
            .selected_zero_set
            .iter()
            .map(|&old_j| perm.iter().position(|&o| o == old_j).unwrap())
            .collect();
        expected_zeros.sort_unstable();
        assert_eq!(res.selected_zero_set, expected_zeros);
        Ok(())
    }
}
