//! Adaptive L^q penalty construction and the exact scalar proximal operator.
//!
//! Every coordinate update in the solvers reduces to minimizing
//! `g*(t - z)^2 + kappa*|t|^q` over the real line, which [`prox_lq`] solves
//! exactly: in closed form for `q = 1` (soft thresholding) and by a
//! safeguarded Newton root finder plus a candidate comparison for `q < 1`.

use crate::error::{Error, Result};
use nalgebra::DVector;

/// Default floor applied to `|theta_tilde_j|` before raising it to `-gamma`,
/// so weights stay finite when an initial estimate lands exactly on zero.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-10;

/// Absolute tolerance on the prox root location.
const PROX_ROOT_TOL: f64 = 1e-13;
/// Iteration cap for the prox root finder.
const PROX_MAX_ITER: usize = 200;

/// Tuning triplet `(gamma, r, q)` together with the convergence rate of the
/// initial estimator, e.g. `T^{-1/2}` or `n^{-1/2}`.
///
/// The penalty level is `alpha = rate^r` and the per-coordinate weights are
/// `kappa_j = alpha * |theta_tilde_j|^{-gamma}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    pub gamma: f64,
    pub r: f64,
    pub q: f64,
    pub rate: f64,
    pub min_weight_floor: f64,
}

impl TuningConfig {
    /// Validated constructor with the default weight floor.
    pub fn new(gamma: f64, r: f64, q: f64, rate: f64) -> Result<Self> {
        Self::with_floor(gamma, r, q, rate, DEFAULT_WEIGHT_FLOOR)
    }

    pub fn with_floor(gamma: f64, r: f64, q: f64, rate: f64, min_weight_floor: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::invalid(format!("q must lie in (0, 1], got {q}")));
        }
        if !gamma.is_finite() || gamma <= -(1.0 - q) {
            return Err(Error::invalid(format!(
                "gamma must satisfy gamma > -(1-q) = {}, got {gamma}",
                -(1.0 - q)
            )));
        }
        if !r.is_finite() {
            return Err(Error::invalid(format!("r must be finite, got {r}")));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid(format!("rate must be positive and finite, got {rate}")));
        }
        if !(min_weight_floor >= 0.0) {
            return Err(Error::invalid(format!(
                "min_weight_floor must be nonnegative, got {min_weight_floor}"
            )));
        }
        Ok(TuningConfig { gamma, r, q, rate, min_weight_floor })
    }

    /// Penalty level `alpha = rate^r`.
    pub fn alpha(&self) -> f64 {
        self.rate.powf(self.r)
    }

    /// Whether `r` sits inside the window `1 < r < 2 - q + gamma` under which
    /// the selection guarantees apply. Callers that accept configs outside
    /// the window should warn rather than reject.
    pub fn rate_exponent_in_window(&self) -> bool {
        self.r > 1.0 && self.r < 2.0 - self.q + self.gamma
    }
}

/// Nonnegative per-coordinate penalty weights `kappa_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    kappa: DVector<f64>,
}

impl WeightVector {
    /// Wraps raw weights, checking finiteness and nonnegativity.
    pub fn from_raw(kappa: DVector<f64>) -> Result<Self> {
        if kappa.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        Ok(WeightVector { kappa })
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.len() == 0
    }

    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }

    /// Diagnostic bounds given the true active set: the largest weight on the
    /// active block (`a_T`) and the smallest weight on the zero block (`b_T`).
    /// Either is `None` when the corresponding block is empty.
    pub fn active_bounds(&self, true_active: &[bool]) -> (Option<f64>, Option<f64>) {
        assert_eq!(true_active.len(), self.kappa.len(), "mask length mismatch");
        let mut a_t: Option<f64> = None;
        let mut b_t: Option<f64> = None;
        for (k, &act) in self.kappa.iter().zip(true_active) {
            if act {
                a_t = Some(a_t.map_or(*k, |a: f64| a.max(*k)));
            } else {
                b_t = Some(b_t.map_or(*k, |b: f64| b.min(*k)));
            }
        }
        (a_t, b_t)
    }
}

/// Computes adaptive weights `kappa_j = alpha * |theta_tilde_j|^{-gamma}`,
/// flooring `|theta_tilde_j|` at `cfg.min_weight_floor` first.
pub fn compute_weights(theta_tilde: &DVector<f64>, cfg: &TuningConfig) -> Result<WeightVector> {
    if theta_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("theta_tilde must be finite"));
    }
    let alpha = cfg.alpha();
    let kappa = DVector::from_iterator(
        theta_tilde.len(),
        theta_tilde.iter().map(|v| {
            let base = v.abs().max(cfg.min_weight_floor);
            alpha * base.powf(-cfg.gamma)
        }),
    );
    WeightVector::from_raw(kappa)
}

/// Exact global minimizer of `f(t) = g*(t - z)^2 + kappa*|t|^q` over the reals.
///
/// For `q = 1` this is soft thresholding. For `q < 1` the candidates are
/// `t = 0` and the larger positive root of the stationarity equation on
/// `sign(z) * t > 0`; the candidate with the smaller objective wins and exact
/// ties break to zero.
pub fn prox_lq(g: f64, z: f64, kappa: f64, q: f64) -> Result<f64> {
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::invalid(format!("g must be positive and finite, got {g}")));
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::invalid(format!("kappa must be nonnegative and finite, got {kappa}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("q must lie in (0, 1], got {q}")));
    }
    if !z.is_finite() {
        return Err(Error::invalid(format!("z must be finite, got {z}")));
    }

    if kappa == 0.0 {
        return Ok(z);
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        let shifted = z.abs() - kappa / (2.0 * g);
        return Ok(if shifted > 0.0 { z.signum() * shifted } else { 0.0 });
    }

    // Reduce to g = 1 by dividing the objective through by g.
    let w = kappa / g;
    let zz = z.abs();

    // phi(t) = f'(t) on t > 0. It is convex with a minimum at t_inf; a local
    // minimizer of f exists iff phi(t_inf) <= 0 and is the larger root of phi.
    let phi = |t: f64| 2.0 * (t - zz) + w * q * t.powf(q - 1.0);
    let phi_prime = |t: f64| 2.0 + w * q * (q - 1.0) * t.powf(q - 2.0);

    let t_inf = (w * q * (1.0 - q) / 2.0).powf(1.0 / (2.0 - q));
    if t_inf >= zz || phi(t_inf) > 0.0 {
        return Ok(0.0);
    }

    // Safeguarded Newton on [t_inf, zz]: phi(lo) <= 0 <= phi(hi) and phi is
    // increasing on this interval, so the bracket is maintained exactly.
    let mut lo = t_inf;
    let mut hi = zz;
    let mut t = hi;
    let mut converged = false;
    for _ in 0..PROX_MAX_ITER {
        let ft = phi(t);
        if ft > 0.0 {
            hi = t;
        } else if ft < 0.0 {
            lo = t;
        } else {
            converged = true;
            break;
        }
        let mut next = t - ft / phi_prime(t);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < PROX_ROOT_TOL {
            t = next;
            converged = true;
            break;
        }
        t = next;
    }
    if !converged {
        return Err(Error::numerical(format!(
            "prox root finder did not converge (g={g}, z={z}, kappa={kappa}, q={q})"
        )));
    }

    let f_root = (t - zz) * (t - zz) + w * t.powf(q);
    let f_zero = zz * zz;
    Ok(if f_root < f_zero { z.signum() * t } else { 0.0 })
}
