//! Cox-type point process with ergodic Ornstein-Uhlenbeck covariates.
//!
//! Intensity of mark `a` is `exp(sum_j theta[a][j] * X_t^j)` with the
//! covariate vector frozen at the start of each simulation grid cell
//! (left-continuous piecewise-constant convention). Simulation and the
//! quasi-log-likelihood share that convention, so the maximizer sees a
//! correctly specified model at the discrete level.

use crate::error::{Error, Result};
use crate::kahan::{KahanSum, KahanVec};
use crate::newton::{minimize, Loss, NewtonOptions};
use crate::seed::{replication_rng, STREAM_COVARIATES, STREAM_EVENTS};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use std::sync::atomic::{AtomicBool, Ordering};
use std::fmt::Write as _;
use std::path::Path;

/// Hard ceiling on per-cell expected event counts; beyond it the grid or the
/// parameters are unusable and simulation aborts.
const MAX_CELL_INTENSITY: f64 = 1e6;

/// Clamp applied to the log-intensity inside guarded evaluations.
const LOG_INTENSITY_GUARD: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct CoxModel {
    /// Number of point-process components (marks).
    pub n_marks: usize,
    /// Number of covariates J.
    pub n_covariates: usize,
    /// Mean-reversion speeds of the OU covariates, one per covariate.
    pub ou_speeds: Vec<f64>,
    /// Common diffusion coefficient of the OU covariates.
    pub ou_vol: f64,
    /// Observation horizon T.
    pub horizon: f64,
    /// Simulation grid step.
    pub grid_step: f64,
    /// True coefficients, `n_marks x n_covariates`.
    pub theta_true: DMatrix<f64>,
}

impl CoxModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_marks == 0 || self.n_covariates == 0 {
            return Err(Error::invalid("n_marks and n_covariates must be positive"));
        }
        if self.ou_speeds.len() != self.n_covariates {
            return Err(Error::invalid("ou_speeds length must equal n_covariates"));
        }
        if self.ou_speeds.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("ou_speeds must be positive"));
        }
        if !(self.ou_vol.is_finite() && self.ou_vol > 0.0) {
            return Err(Error::invalid("ou_vol must be positive"));
        }
        if !(self.horizon > 0.0 && self.grid_step > 0.0) {
            return Err(Error::invalid("horizon and grid_step must be positive"));
        }
        let cells = self.horizon / self.grid_step;
        if (cells - cells.round()).abs() > 1e-6 * cells.max(1.0) {
            return Err(Error::invalid("grid_step must divide horizon into an integer number of cells"));
        }
        if self.theta_true.nrows() != self.n_marks || self.theta_true.ncols() != self.n_covariates {
            return Err(Error::invalid("theta_true must be n_marks x n_covariates"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        (self.horizon / self.grid_step).round() as usize
    }

    /// Total parameter dimension `n_marks * n_covariates`.
    pub fn dim(&self) -> usize {
        self.n_marks * self.n_covariates
    }

    /// True coefficients flattened mark-major to match likelihood arguments.
    pub fn theta_true_flat(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for a in 0..self.n_marks {
            for j in 0..self.n_covariates {
                out[a * self.n_covariates + j] = self.theta_true[(a, j)];
            }
        }
        out
    }

    /// Stationary variances `vol^2 / (2 a_j)` of the OU covariates.
    pub fn stationary_variances(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_covariates,
            self.ou_speeds.iter().map(|a| self.ou_vol * self.ou_vol / (2.0 * a)),
        )
    }

    /// The 20-covariate single-mark benchmark model used by the bundled
    /// reproduction scenarios (tables 1 and 2).
    pub fn reference_model(horizon: f64) -> CoxModel {
        let speeds: Vec<f64> =
            (0..20).map(|i| [0.15, 0.2, 0.25, 0.3, 0.35][i % 5]).collect();
        let mut theta = DMatrix::zeros(1, 20);
        for (j, v) in [2.0, -1.0, 1.0, -0.5, -1.5, 1.5, 0.5, 0.75].iter().enumerate() {
            theta[(0, j)] = *v;
        }
        CoxModel {
            n_marks: 1,
            n_covariates: 20,
            ou_speeds: speeds,
            ou_vol: 0.4,
            horizon,
            grid_step: 0.01,
            theta_true: theta,
        }
    }
}

/// One simulated dataset: covariates on the grid (rows are grid points
/// `t_i = i * grid_step`, `i = 0..=n_cells`) and per-mark sorted event times
/// in `(0, T]`.
#[derive(Debug, Clone)]
pub struct CoxSample {
    pub grid_step: f64,
    pub covariates: DMatrix<f64>,
    pub events: Vec<Vec<f64>>,
}

impl CoxSample {
    pub fn n_cells(&self) -> usize {
        self.covariates.nrows() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.n_cells() as f64 * self.grid_step
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().map(|e| e.len()).sum()
    }

    /// Cell whose left endpoint carries the intensity for an event at `time`,
    /// under the left-continuous convention: `(t_i, t_{i+1}] -> i`.
    pub fn cell_of(&self, time: f64) -> usize {
        let idx = (time / self.grid_step).ceil() as isize - 1;
        idx.clamp(0, self.n_cells() as isize - 1) as usize
    }
}

/// Draws the OU covariate path by exact transition:
/// `X_{t+step} = e^{-a step} X_t + N(0, vol^2 (1 - e^{-2 a step}) / (2a))`.
pub fn simulate_covariates<R: Rng>(model: &CoxModel, rng: &mut R) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = model.n_cells();
    let j_dim = model.n_covariates;
    let mut path = DMatrix::zeros(n + 1, j_dim);
    let decay: Vec<f64> = model.ou_speeds.iter().map(|a| (-a * model.grid_step).exp()).collect();
    let noise: Vec<Normal<f64>> = model
        .ou_speeds
        .iter()
        .map(|a| {
            let var = model.ou_vol * model.ou_vol * (1.0 - (-2.0 * a * model.grid_step).exp())
                / (2.0 * a);
            Normal::new(0.0, var.sqrt()).expect("valid OU step variance")
        })
        .collect();
    for i in 1..=n {
        for j in 0..j_dim {
            path[(i, j)] = decay[j] * path[(i - 1, j)] + noise[j].sample(rng);
        }
    }
    Ok(path)
}

/// Draws event times given a covariate path: on each cell the intensity is
/// frozen at its left endpoint and events are a homogeneous Poisson process
/// within the cell, which is exact for the piecewise-constant intensity.
pub fn simulate_events<R: Rng>(
    model: &CoxModel,
    path: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    let n = model.n_cells();
    if path.nrows() != n + 1 || path.ncols() != model.n_covariates {
        return Err(Error::invalid("covariate path does not match the model grid"));
    }
    let step = model.grid_step;
    let mut events: Vec<Vec<f64>> = vec![Vec::new(); model.n_marks];
    let mut cell_times: Vec<f64> = Vec::new();
    for i in 0..n {
        let t0 = i as f64 * step;
        for a in 0..model.n_marks {
            let mut s = 0.0;
            for j in 0..model.n_covariates {
                s += model.theta_true[(a, j)] * path[(i, j)];
            }
            let mean = s.exp() * step;
            if !(mean.is_finite() && mean <= MAX_CELL_INTENSITY) {
                return Err(Error::numerical(format!(
                    "cell intensity overflow at t={t0}: lambda*step = {mean}"
                )));
            }
            let count = if mean > 0.0 {
                Poisson::new(mean).map_err(|e| Error::numerical(e.to_string()))?.sample(rng) as usize
            } else {
                0
            };
            cell_times.clear();
            for _ in 0..count {
                // (0, 1] draw keeps event times inside (t_i, t_{i+1}].
                let u = 1.0 - rng.random::<f64>();
                cell_times.push(t0 + step * u);
            }
            cell_times.sort_by(|x, y| x.partial_cmp(y).unwrap());
            events[a].extend_from_slice(&cell_times);
        }
    }
    Ok(events)
}

/// Simulates a full dataset from the per-replication streams of `base_seed`.
pub fn simulate(model: &CoxModel, base_seed: u64, replication: u64) -> Result<CoxSample> {
    let mut cov_rng = replication_rng(base_seed, replication, STREAM_COVARIATES);
    let covariates = simulate_covariates(model, &mut cov_rng)?;
    let mut ev_rng = replication_rng(base_seed, replication, STREAM_EVENTS);
    let events = simulate_events(model, &covariates, &mut ev_rng)?;
    Ok(CoxSample { grid_step: model.grid_step, covariates, events })
}

struct LikTerms {
    value: f64,
    gradient: Option<DVector<f64>>,
    hessian: Option<DMatrix<f64>>,
    clamped: bool,
}

/// Precomputed evaluation state: a cell-major covariate buffer plus the
/// per-mark sums of covariate vectors at event cells (the event term of the
/// likelihood is linear in theta through these sums).
struct CoxKernel {
    d: usize,
    j_dim: usize,
    n: usize,
    step: f64,
    cells: Vec<f64>,
    event_xsum: Vec<f64>,
}

impl CoxKernel {
    fn new(model: &CoxModel, sample: &CoxSample) -> Result<Self> {
        let d = model.n_marks;
        let j_dim = model.n_covariates;
        if sample.events.len() != d {
            return Err(Error::invalid("sample mark count does not match the model"));
        }
        if sample.covariates.ncols() != j_dim {
            return Err(Error::invalid("sample covariate dimension does not match the model"));
        }
        let n = sample.n_cells();
        let mut cells = vec![0.0f64; n * j_dim];
        for j in 0..j_dim {
            for i in 0..n {
                cells[i * j_dim + j] = sample.covariates[(i, j)];
            }
        }
        let mut event_xsum = vec![0.0f64; d * j_dim];
        for a in 0..d {
            let mut acc = KahanVec::zeros(j_dim);
            for &time in &sample.events[a] {
                let cell = sample.cell_of(time);
                let x = &cells[cell * j_dim..(cell + 1) * j_dim];
                for j in 0..j_dim {
                    acc.add(j, x[j]);
                }
            }
            let v = acc.into_vector();
            for j in 0..j_dim {
                event_xsum[a * j_dim + j] = v[j];
            }
        }
        Ok(CoxKernel { d, j_dim, n, step: sample.grid_step, cells, event_xsum })
    }

    fn terms(
        &self,
        theta: &DVector<f64>,
        clamp: Option<f64>,
        want_gradient: bool,
        want_hessian: bool,
    ) -> Result<LikTerms> {
        let (d, j_dim) = (self.d, self.j_dim);
        let p = d * j_dim;
        if theta.len() != p {
            return Err(Error::invalid(format!("theta has length {}, expected {p}", theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta must be finite"));
        }
        let theta_s = theta.as_slice();

        // Compensated accumulation keeps value and gradient rounding well
        // below the Newton stopping tolerance on long horizons.
        let mut value = KahanSum::default();
        let mut gradient = want_gradient.then(|| KahanVec::zeros(p));
        let mut hess_local = want_hessian.then(|| vec![0.0f64; p * p]);
        let mut clamped = false;

        // Event term: theta_a . (sum of covariates at event cells).
        for idx in 0..p {
            value.add(theta_s[idx] * self.event_xsum[idx]);
            if let Some(g) = gradient.as_mut() {
                g.add(idx, self.event_xsum[idx]);
            }
        }

        // Compensator term: cell sums of exp(theta_a . x) * step per mark.
        for i in 0..self.n {
            let x = &self.cells[i * j_dim..(i + 1) * j_dim];
            for a in 0..d {
                let ta = &theta_s[a * j_dim..(a + 1) * j_dim];
                let mut s = 0.0;
                for j in 0..j_dim {
                    s += ta[j] * x[j];
                }
                if let Some(bound) = clamp {
                    if s > bound {
                        s = bound;
                        clamped = true;
                    }
                }
                let w = s.exp() * self.step;
                value.add(-w);
                if let Some(g) = gradient.as_mut() {
                    for j in 0..j_dim {
                        g.add(a * j_dim + j, -x[j] * w);
                    }
                }
                if let Some(h) = hess_local.as_mut() {
                    let base = a * j_dim;
                    for j in 0..j_dim {
                        let xjw = x[j] * w;
                        let row = &mut h[(base + j) * p + base..(base + j) * p + base + j_dim];
                        for k in j..j_dim {
                            row[k] -= xjw * x[k];
                        }
                    }
                }
            }
        }
        let hessian = hess_local.map(|h| {
            let mut out = DMatrix::zeros(p, p);
            for a in 0..p {
                for b in a..p {
                    out[(a, b)] = h[a * p + b];
                    out[(b, a)] = h[a * p + b];
                }
            }
            out
        });
        Ok(LikTerms {
            value: value.value(),
            gradient: gradient.map(KahanVec::into_vector),
            hessian,
            clamped,
        })
    }
}

fn loglik_terms(
    model: &CoxModel,
    sample: &CoxSample,
    theta: &DVector<f64>,
    clamp: Option<f64>,
    want_gradient: bool,
    want_hessian: bool,
) -> Result<LikTerms> {
    CoxKernel::new(model, sample)?.terms(theta, clamp, want_gradient, want_hessian)
}

/// Quasi-log-likelihood: event log-intensities minus the compensator.
pub fn quasi_loglik(model: &CoxModel, sample: &CoxSample, theta: &DVector<f64>) -> Result<f64> {
    Ok(loglik_terms(model, sample, theta, None, false, false)?.value)
}

pub fn quasi_loglik_gradient(
    model: &CoxModel,
    sample: &CoxSample,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(loglik_terms(model, sample, theta, None, true, false)?.gradient.unwrap())
}

pub fn quasi_loglik_hessian(
    model: &CoxModel,
    sample: &CoxSample,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    Ok(loglik_terms(model, sample, theta, None, false, true)?.hessian.unwrap())
}

/// Negated quasi-log-likelihood as a minimization target.
pub struct CoxLoss {
    kernel: CoxKernel,
    clamp_hit: AtomicBool,
}

impl CoxLoss {
    pub fn new(model: &CoxModel, sample: &CoxSample) -> Result<Self> {
        Ok(CoxLoss { kernel: CoxKernel::new(model, sample)?, clamp_hit: AtomicBool::new(false) })
    }

    pub fn clamp_was_hit(&self) -> bool {
        self.clamp_hit.load(Ordering::Relaxed)
    }
}

impl Loss for CoxLoss {
    fn dim(&self) -> usize {
        self.kernel.d * self.kernel.j_dim
    }

    fn eval(&self, theta: &DVector<f64>) -> f64 {
        match self.kernel.terms(theta, None, false, false) {
            Ok(t) => -t.value,
            Err(_) => f64::INFINITY,
        }
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        -self.kernel.terms(theta, None, true, false).expect("finite theta").gradient.unwrap()
    }

    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        -self.kernel.terms(theta, None, false, true).expect("finite theta").hessian.unwrap()
    }

    fn eval_guarded(&self, theta: &DVector<f64>) -> (f64, bool) {
        match self.kernel.terms(theta, Some(LOG_INTENSITY_GUARD), false, false) {
            Ok(t) => {
                if t.clamped {
                    self.clamp_hit.store(true, Ordering::Relaxed);
                }
                (-t.value, t.clamped)
            }
            Err(_) => (f64::INFINITY, false),
        }
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let t = self.kernel.terms(theta, None, true, true).expect("finite theta");
        (-t.gradient.unwrap(), -t.hessian.unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct QmleReport {
    pub theta: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Whether the log-intensity guard fired during line searches.
    pub clamped: bool,
}

/// Quasi-maximum-likelihood estimate by damped Newton on the concave
/// quasi-log-likelihood, clipped to the box.
pub fn qmle(
    model: &CoxModel,
    sample: &CoxSample,
    start: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<QmleReport> {
    let loss = CoxLoss::new(model, sample)?;
    let report = minimize(&loss, start, lower, upper, &NewtonOptions::default())?;
    if !report.converged {
        return Err(Error::numerical(format!(
            "QMLE did not converge: gradient norm {:.3e} after {} iterations (diverging maximizer or degenerate data)",
            report.grad_norm, report.iterations
        )));
    }
    // Divergence guard: a maximizer pinned to the box boundary with the
    // gradient still pushing outward indicates sup over the boundary.
    let grad = loss.gradient(&report.theta);
    for j in 0..report.theta.len() {
        let at_upper = report.theta[j] >= upper[j] - 1e-8;
        let at_lower = report.theta[j] <= lower[j] + 1e-8;
        if (at_upper && grad[j] < -1e-8) || (at_lower && grad[j] > 1e-8) {
            return Err(Error::numerical(
                "QMLE diverges to the parameter box boundary".to_string(),
            ));
        }
    }
    Ok(QmleReport {
        theta: report.theta,
        iterations: report.iterations,
        grad_norm: report.grad_norm,
        clamped: report.clamped || loss.clamp_was_hit(),
    })
}

/// Weighting matrix from the observed information:
/// `-T^{-1} d^2 l(theta)` if positive definite, plus `T^{-1} I`.
pub fn g_hat_hessian(model: &CoxModel, sample: &CoxSample, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = model.dim();
    let t_len = sample.horizon();
    let h = quasi_loglik_hessian(model, sample, theta)?;
    let m = -h / t_len;
    let mut out = DMatrix::identity(p, p) / t_len;
    if Cholesky::new(m.clone()).is_some() {
        out += m;
    }
    Ok(out)
}

/// Weighting matrix from the per-mark second-moment integrals
/// `(1/T) sum_i X_i X_i' exp(theta_a . X_i) step + (1/T) I`, block diagonal
/// over marks.
pub fn g_hat_moment(model: &CoxModel, sample: &CoxSample, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = model.dim();
    if theta.len() != p {
        return Err(Error::invalid("theta dimension mismatch"));
    }
    let j_dim = model.n_covariates;
    let t_len = sample.horizon();
    let n = sample.n_cells();
    let mut out = DMatrix::identity(p, p) / t_len;
    for a in 0..model.n_marks {
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..j_dim {
                s += theta[a * j_dim + j] * sample.covariates[(i, j)];
            }
            let w = s.exp() * sample.grid_step / t_len;
            for j in 0..j_dim {
                let xj = sample.covariates[(i, j)];
                for k in j..j_dim {
                    out[(a * j_dim + j, a * j_dim + k)] += xj * sample.covariates[(i, k)] * w;
                }
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            out[(b, a)] = out[(a, b)];
        }
    }
    Ok(out)
}

/// Closed-form limit of the weighting matrix for one mark when the stationary
/// covariate law is centered Gaussian with independent coordinates:
/// `Gamma = (Sigma + u u') exp(theta' Sigma theta / 2)` with
/// `Sigma = diag(vars)` and `u = Sigma theta`. Test oracle.
pub fn gamma_analytic(theta: &DVector<f64>, stationary_vars: &DVector<f64>) -> DMatrix<f64> {
    let j_dim = theta.len();
    assert_eq!(stationary_vars.len(), j_dim, "dimension mismatch");
    let u = DVector::from_iterator(j_dim, theta.iter().zip(stationary_vars.iter()).map(|(t, v)| t * v));
    let mut quad = 0.0;
    for j in 0..j_dim {
        quad += theta[j] * theta[j] * stationary_vars[j];
    }
    let scale = (0.5 * quad).exp();
    let mut out = DMatrix::zeros(j_dim, j_dim);
    for j in 0..j_dim {
        out[(j, j)] = stationary_vars[j];
        for k in 0..j_dim {
            out[(j, k)] += u[j] * u[k];
        }
    }
    out * scale
}

/// Normalized quasi-likelihood-ratio field `(l(theta) - l(theta_star)) / T`.
pub fn y_diagnostic(
    model: &CoxModel,
    sample: &CoxSample,
    theta: &DVector<f64>,
    theta_star: &DVector<f64>,
) -> Result<f64> {
    let l_theta = quasi_loglik(model, sample, theta)?;
    let l_star = quasi_loglik(model, sample, theta_star)?;
    Ok((l_theta - l_star) / sample.horizon())
}

/// Writes the covariate grid as CSV with header `t,x1..xJ`, full-precision
/// shortest round-trip floats.
pub fn write_covariates_csv(sample: &CoxSample, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push('t');
    for j in 1..=sample.covariates.ncols() {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for i in 0..sample.covariates.nrows() {
        let _ = write!(out, "{}", i as f64 * sample.grid_step);
        for j in 0..sample.covariates.ncols() {
            let _ = write!(out, ",{}", sample.covariates[(i, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::data(format!("write {}: {e}", path.display())))
}

/// Writes events as CSV with header `mark,time` (marks are 1-based).
pub fn write_events_csv(sample: &CoxSample, path: &Path) -> Result<()> {
    let mut out = String::from("mark,time\n");
    for (a, times) in sample.events.iter().enumerate() {
        for t in times {
            let _ = writeln!(out, "{},{}", a + 1, t);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::data(format!("write {}: {e}", path.display())))
}

fn parse_f64(field: &str, context: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::data(format!("{context}: cannot parse `{field}` as a number")))
}

/// Reads a covariate grid written by [`write_covariates_csv`]; the grid step
/// is recovered from the time column and checked for uniformity.
pub fn read_covariates_csv(path: &Path) -> Result<(f64, DMatrix<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("covariates file is empty"))?;
    let j_dim = header.split(',').count().saturating_sub(1);
    if j_dim == 0 {
        return Err(Error::data("covariates header must be t,x1..xJ"));
    }
    let mut times = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != j_dim + 1 {
            return Err(Error::data(format!(
                "covariates line {}: expected {} fields, got {}",
                lineno + 2,
                j_dim + 1,
                fields.len()
            )));
        }
        times.push(parse_f64(fields[0], "covariates time")?);
        for f in &fields[1..] {
            rows.push(parse_f64(f, "covariate value")?);
        }
    }
    if times.len() < 2 {
        return Err(Error::data("covariates file needs at least two grid points"));
    }
    let step = times[1] - times[0];
    if step <= 0.0 {
        return Err(Error::data("covariate times must be increasing"));
    }
    for (i, t) in times.iter().enumerate() {
        if (t - i as f64 * step).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::data("covariate time grid is not uniform"));
        }
    }
    let n_rows = times.len();
    let matrix = DMatrix::from_fn(n_rows, j_dim, |i, j| rows[i * j_dim + j]);
    Ok((step, matrix))
}

/// Reads events written by [`write_events_csv`].
pub fn read_events_csv(path: &Path, n_marks: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("events file is empty"))?;
    if header.trim() != "mark,time" {
        return Err(Error::data("events header must be `mark,time`"));
    }
    let mut events = vec![Vec::new(); n_marks];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mark: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::data(format!("events line {}: bad mark", lineno + 2)))?;
        let time = parse_f64(
            fields.next().ok_or_else(|| Error::data(format!("events line {}: missing time", lineno + 2)))?,
            "event time",
        )?;
        if mark == 0 || mark > n_marks {
            return Err(Error::data(format!("events line {}: mark {mark} out of range", lineno + 2)));
        }
        events[mark - 1].push(time);
    }
    for times in &mut events {
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    Ok(events)
}

/// Reads a full sample from `covariates.csv` and `events.csv` in `dir`.
pub fn read_sample_dir(dir: &Path, n_marks: usize) -> Result<CoxSample> {
    let (grid_step, covariates) = read_covariates_csv(&dir.join("covariates.csv"))?;
    let events = read_events_csv(&dir.join("events.csv"), n_marks)?;
    Ok(CoxSample { grid_step, covariates, events })
}

/// Writes `covariates.csv` and `events.csv` into `dir`.
pub fn write_sample_dir(sample: &CoxSample, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::data(format!("create {}: {e}", dir.display())))?;
    write_covariates_csv(sample, &dir.join("covariates.csv"))?;
    write_events_csv(sample, &dir.join("events.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(j: usize, horizon: f64, grid_step: f64, theta: &[f64]) -> CoxModel {
        CoxModel {
            n_marks: 1,
            n_covariates: j,
            ou_speeds: (0..j).map(|i| 0.2 + 0.05 * i as f64).collect(),
            ou_vol: 0.4,
            horizon,
            grid_step,
            theta_true: DMatrix::from_fn(1, j, |_, k| theta[k]),
        }
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn ou_variance_matches_stationary_formula() {
        // a = 0.2, vol = 0.4: Var(X_50) ~= 0.4^2 / (2 * 0.2) = 0.4.
        let model = small_model(1, 50.0, 1.0, &[0.0]);
        let mut model = model;
        model.ou_speeds = vec![0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reps = 10_000;
        let finals: Vec<f64> = (0..reps)
            .map(|_| {
                let path = simulate_covariates(&model, &mut rng).unwrap();
                path[(model.n_cells(), 0)]
            })
            .collect();
        let (_, v) = mean_var(&finals);
        let exact = 0.4 * (1.0 - (-2.0f64 * 0.2 * 50.0).exp());
        let se = exact * (2.0 / (reps as f64 - 1.0)).sqrt();
        assert!((v - exact).abs() < 3.0 * se, "variance {v} vs {exact} (3se = {})", 3.0 * se);
    }

    #[test]
    fn ou_transition_is_exact_across_step_halvings() {
        // The exact transition gives the same law of X_t for any grid step;
        // first two moments agree within Monte Carlo error.
        let t_end = 10.0;
        let reps = 4000;
        let mut variances = Vec::new();
        for step in [0.5, 0.25, 0.125] {
            let mut model = small_model(1, t_end, step, &[0.0]);
            model.ou_speeds = vec![0.3];
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let finals: Vec<f64> = (0..reps)
                .map(|_| {
                    let path = simulate_covariates(&model, &mut rng).unwrap();
                    path[(model.n_cells(), 0)]
                })
                .collect();
            let (m, v) = mean_var(&finals);
            assert!(m.abs() < 3.0 * (v / reps as f64).sqrt());
            variances.push(v);
        }
        let exact = 0.16 / 0.6 * (1.0 - (-2.0f64 * 0.3 * t_end).exp());
        for v in variances {
            let se = exact * (2.0 / (reps as f64 - 1.0)).sqrt();
            assert!((v - exact).abs() < 3.0 * se, "variance {v} vs exact {exact}");
        }
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let model = CoxModel::reference_model(5.0);
        let a = simulate(&model, 123, 4).unwrap();
        let b = simulate(&model, 123, 4).unwrap();
        assert_eq!(a.covariates, b.covariates);
        assert_eq!(a.events, b.events);
        let c = simulate(&model, 124, 4).unwrap();
        assert_ne!(a.covariates, c.covariates);
    }

    #[test]
    fn unit_rate_event_counts_are_poisson() {
        // theta* = 0 freezes the intensity at 1; the total count over [0, T]
        // is exactly Poisson(T).
        let t_end = 100.0;
        let model = small_model(1, t_end, 0.1, &[0.0]);
        let path = DMatrix::zeros(model.n_cells() + 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 10_000;
        let counts: Vec<f64> = (0..reps)
            .map(|_| simulate_events(&model, &path, &mut rng).unwrap()[0].len() as f64)
            .collect();
        let (m, v) = mean_var(&counts);
        let se_mean = (t_end / reps as f64).sqrt();
        assert!((m - t_end).abs() < 3.0 * se_mean, "mean {m}");
        // Var(s^2) for Poisson(lambda): (2 lambda^2 + lambda) / n, roughly.
        let se_var = ((2.0 * t_end * t_end + t_end) / reps as f64).sqrt();
        assert!((v - t_end).abs() < 3.0 * se_var, "variance {v}");
    }

    #[test]
    fn frozen_covariates_reduce_to_homogeneous_poisson() {
        let t_end = 50.0;
        let mut model = small_model(2, t_end, 0.05, &[0.8, 0.5]);
        model.ou_vol = 0.4;
        let mut path = DMatrix::zeros(model.n_cells() + 1, 2);
        for i in 0..=model.n_cells() {
            path[(i, 0)] = 0.3;
            path[(i, 1)] = -0.2;
        }
        let lambda: f64 = (0.8f64 * 0.3 + 0.5 * (-0.2)).exp();
        let expect = t_end * lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps = 3000;
        let counts: Vec<f64> = (0..reps)
            .map(|_| simulate_events(&model, &path, &mut rng).unwrap()[0].len() as f64)
            .collect();
        let (m, v) = mean_var(&counts);
        assert!((m - expect).abs() < 3.0 * (expect / reps as f64).sqrt(), "mean {m} vs {expect}");
        let se_var = ((2.0 * expect * expect + expect) / reps as f64).sqrt();
        assert!((v - expect).abs() < 4.0 * se_var, "var {v} vs {expect}");
    }

    #[test]
    fn reference_model_event_count_matches_gaussian_mgf() {
        // Stationary mean intensity is exp(theta' Sigma theta / 2); computed
        // from the model and checked against the simulated mean within Monte
        // Carlo error (the zero start depresses the mean by ~1 relaxation
        // time worth of events, well inside the tolerance here).
        let t_end = 50.0;
        let model = CoxModel::reference_model(t_end);
        let vars = model.stationary_variances();
        let theta = model.theta_true_flat();
        let mut quad = 0.0;
        for j in 0..20 {
            quad += theta[j] * theta[j] * vars[j];
        }
        let expect = t_end * (0.5 * quad).exp();
        let reps = 1200u64;
        let counts: Vec<f64> = (0..reps)
            .map(|rep| simulate(&model, 31, rep).unwrap().event_count() as f64)
            .collect();
        let (m, v) = mean_var(&counts);
        let se = (v / reps as f64).sqrt();
        assert!((m - expect).abs() < 3.0 * se, "mean {m} vs {expect} (3se = {})", 3.0 * se);
    }

    #[test]
    fn event_times_live_in_their_cells() {
        let model = CoxModel::reference_model(20.0);
        let sample = simulate(&model, 17, 0).unwrap();
        assert!(sample.event_count() > 0);
        for &t in &sample.events[0] {
            assert!(t > 0.0 && t <= 20.0);
            let cell = sample.cell_of(t);
            let lo = cell as f64 * model.grid_step;
            let hi = lo + model.grid_step;
            assert!(t > lo - 1e-12 && t <= hi + 1e-12);
        }
        // Boundary convention: a time exactly at a grid point maps to the
        // cell it closes.
        assert_eq!(sample.cell_of(model.grid_step), 0);
        assert_eq!(sample.cell_of(2.0 * model.grid_step), 1);
        assert_eq!(sample.cell_of(1e-9), 0);
    }

    #[test]
    fn intensity_overflow_is_an_error() {
        let model = small_model(1, 1.0, 0.01, &[40.0]);
        let mut path = DMatrix::zeros(101, 1);
        for i in 0..=100 {
            path[(i, 0)] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = simulate_events(&model, &path, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn loglik_no_events_at_zero_theta_is_minus_horizon() {
        let model = small_model(2, 8.0, 0.01, &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let covariates = simulate_covariates(&model, &mut rng).unwrap();
        let sample = CoxSample { grid_step: 0.01, covariates, events: vec![vec![]] };
        let l = quasi_loglik(&model, &sample, &DVector::zeros(2)).unwrap();
        assert!((l + 8.0).abs() < 1e-9, "loglik {l}");
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let model = small_model(3, 20.0, 0.05, &[0.6, -0.4, 0.0]);
        let sample = simulate(&model, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let theta = DVector::from_fn(3, |_, _| 1.6 * rng.random::<f64>() - 0.8);
            let grad = quasi_loglik_gradient(&model, &sample, &theta).unwrap();
            let hess = quasi_loglik_hessian(&model, &sample, &theta).unwrap();
            let h = 1e-5;
            for j in 0..3 {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (quasi_loglik(&model, &sample, &up).unwrap()
                    - quasi_loglik(&model, &sample, &dn).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - grad[j]).abs() <= 1e-6 * (1.0 + grad[j].abs()),
                    "gradient fd mismatch at {j}: {fd} vs {}",
                    grad[j]
                );
                let gu = quasi_loglik_gradient(&model, &sample, &up).unwrap();
                let gd = quasi_loglik_gradient(&model, &sample, &dn).unwrap();
                for k in 0..3 {
                    let fd2 = (gu[k] - gd[k]) / (2.0 * h);
                    assert!(
                        (fd2 - hess[(j, k)]).abs() <= 1e-6 * (1.0 + hess[(j, k)].abs()),
                        "hessian fd mismatch at ({j},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_is_negative_semidefinite() {
        let model = small_model(3, 15.0, 0.05, &[0.5, 0.0, -0.7]);
        let sample = simulate(&model, 21, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let theta = DVector::from_fn(3, |_, _| 3.0 * rng.random::<f64>() - 1.5);
            let hess = quasi_loglik_hessian(&model, &sample, &theta).unwrap();
            let eig = hess.symmetric_eigen();
            for ev in eig.eigenvalues.iter() {
                assert!(*ev <= 1e-10, "positive eigenvalue {ev}");
            }
        }
    }

    #[test]
    fn qmle_is_consistent_at_zero_truth() {
        // Self-consistency: the estimate is within 5 estimated standard
        // errors of the truth in essentially all replications.
        let model = small_model(2, 400.0, 0.1, &[0.0, 0.0]);
        let lo = DVector::from_element(2, -10.0);
        let hi = DVector::from_element(2, 10.0);
        let reps = 60u64;
        let mut bad = 0;
        for rep in 0..reps {
            let sample = simulate(&model, 14, rep).unwrap();
            let fit = qmle(&model, &sample, &DVector::zeros(2), &lo, &hi).unwrap();
            let info = -quasi_loglik_hessian(&model, &sample, &fit.theta).unwrap();
            let cov = info.try_inverse().unwrap();
            for j in 0..2 {
                if fit.theta[j].abs() > 5.0 * cov[(j, j)].sqrt() {
                    bad += 1;
                }
            }
        }
        assert!(bad <= 1, "{bad} coordinates outside 5 standard errors");
    }

    #[test]
    fn qmle_restart_reaches_same_optimum() {
        let model = small_model(3, 50.0, 0.05, &[0.7, -0.5, 0.3]);
        let sample = simulate(&model, 4, 2).unwrap();
        let lo = DVector::from_element(3, -10.0);
        let hi = DVector::from_element(3, 10.0);
        let from_zero = qmle(&model, &sample, &DVector::zeros(3), &lo, &hi).unwrap();
        let start = DVector::from_vec(vec![2.0, 1.5, -2.5]);
        let restarted = qmle(&model, &sample, &start, &lo, &hi).unwrap();
        assert!((from_zero.theta - restarted.theta).norm() < 1e-6);
    }

    #[test]
    fn qmle_zero_events_one_sided_covariate_diverges() {
        // All-positive covariate with no events: the maximizer runs to the
        // lower box boundary and the divergence guard fires.
        let model = small_model(1, 10.0, 0.1, &[0.0]);
        let mut covariates = DMatrix::zeros(101, 1);
        for i in 0..=100 {
            covariates[(i, 0)] = 1.0 + 0.5 * (i as f64 / 100.0);
        }
        let sample = CoxSample { grid_step: 0.1, covariates, events: vec![vec![]] };
        let lo = DVector::from_element(1, -10.0);
        let hi = DVector::from_element(1, 10.0);
        let err = qmle(&model, &sample, &DVector::zeros(1), &lo, &hi).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn g_hat_constructions_coincide_and_are_pd() {
        let model = small_model(3, 30.0, 0.05, &[0.6, -0.3, 0.2]);
        let sample = simulate(&model, 6, 3).unwrap();
        let theta = DVector::from_vec(vec![0.5, -0.2, 0.1]);
        let gh = g_hat_hessian(&model, &sample, &theta).unwrap();
        let gm = g_hat_moment(&model, &sample, &theta).unwrap();
        // For this intensity family the observed information equals the
        // second-moment integral, so the constructions agree exactly.
        assert!((&gh - &gm).norm() < 1e-10 * gh.norm());
        assert!(Cholesky::new(gh.clone()).is_some());
        // And both equal -hessian/T + I/T.
        let t_len = sample.horizon();
        let direct = -quasi_loglik_hessian(&model, &sample, &theta).unwrap() / t_len
            + DMatrix::identity(3, 3) / t_len;
        assert!((&gh - &direct).norm() < 1e-12 * direct.norm());
    }

    #[test]
    fn g_hat_zero_events_is_pd_for_generic_paths() {
        let model = small_model(2, 10.0, 0.05, &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let covariates = simulate_covariates(&model, &mut rng).unwrap();
        let sample = CoxSample { grid_step: 0.05, covariates, events: vec![vec![]] };
        let g = g_hat_hessian(&model, &sample, &DVector::zeros(2)).unwrap();
        assert!(Cholesky::new(g).is_some());
    }

    #[test]
    fn gamma_analytic_closed_forms() {
        // theta = 0 gives Sigma itself.
        let vars = DVector::from_vec(vec![0.4, 0.25]);
        let at_zero = gamma_analytic(&DVector::zeros(2), &vars);
        assert_eq!(at_zero[(0, 0)], 0.4);
        assert_eq!(at_zero[(1, 1)], 0.25);
        assert_eq!(at_zero[(0, 1)], 0.0);
        // One dimension, v = 1, theta = 1: (1 + 1) e^{1/2}.
        let one = gamma_analytic(&DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![1.0]));
        assert!((one[(0, 0)] - 2.0 * 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn gamma_analytic_matches_direct_monte_carlo() {
        let theta = DVector::from_vec(vec![0.7, -0.4]);
        let vars = DVector::from_vec(vec![0.5, 0.3]);
        let gamma = gamma_analytic(&theta, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let draws = 1_000_000usize;
        let norm0 = rand_distr::Normal::new(0.0, vars[0].sqrt()).unwrap();
        let norm1 = rand_distr::Normal::new(0.0, vars[1].sqrt()).unwrap();
        let mut sums = [[0.0f64; 2]; 2];
        let mut sq = [[0.0f64; 2]; 2];
        for _ in 0..draws {
            let x0 = norm0.sample(&mut rng);
            let x1 = norm1.sample(&mut rng);
            let w = (theta[0] * x0 + theta[1] * x1).exp();
            for (a, xa) in [(0usize, x0), (1, x1)] {
                for (b, xb) in [(0usize, x0), (1, x1)] {
                    let v = xa * xb * w;
                    sums[a][b] += v;
                    sq[a][b] += v * v;
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                let mean = sums[a][b] / draws as f64;
                let var = sq[a][b] / draws as f64 - mean * mean;
                let se = (var / draws as f64).sqrt();
                assert!(
                    (mean - gamma[(a, b)]).abs() < 3.0 * se,
                    "entry ({a},{b}): {mean} vs {} (3se {})",
                    gamma[(a, b)],
                    3.0 * se
                );
            }
        }
    }

    #[test]
    fn y_diagnostic_zero_at_truth_and_negative_away() {
        let model = small_model(2, 400.0, 0.1, &[0.5, -0.3]);
        let theta_star = model.theta_true_flat();
        let mut negatives = 0;
        let reps = 40u64;
        for rep in 0..reps {
            let sample = simulate(&model, 23, rep).unwrap();
            assert_eq!(y_diagnostic(&model, &sample, &theta_star, &theta_star).unwrap(), 0.0);
            let mut off = theta_star.clone();
            off[0] += 1.0;
            if y_diagnostic(&model, &sample, &off, &theta_star).unwrap() < 0.0 {
                negatives += 1;
            }
        }
        assert!(negatives >= reps - 1, "only {negatives} of {reps} negative");
    }

    #[test]
    fn y_diagnostic_grows_quadratically_near_truth() {
        let model = small_model(2, 200.0, 0.05, &[0.5, -0.3]);
        let sample = simulate(&model, 29, 0).unwrap();
        let theta_star = model.theta_true_flat();
        let grad = quasi_loglik_gradient(&model, &sample, &theta_star).unwrap();
        let hess = quasi_loglik_hessian(&model, &sample, &theta_star).unwrap();
        let t_len = sample.horizon();
        let dir = DVector::from_vec(vec![1.0, 0.5]);
        for h in [0.05, 0.025] {
            let mut theta = theta_star.clone();
            theta += h * &dir;
            let y = y_diagnostic(&model, &sample, &theta, &theta_star).unwrap();
            let taylor = (h * grad.dot(&dir) + 0.5 * h * h * (&hess * &dir).dot(&dir)) / t_len;
            assert!(
                (y - taylor).abs() <= 0.05 * taylor.abs() + 1e-12,
                "h={h}: y={y} taylor={taylor}"
            );
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let model = CoxModel::reference_model(5.0);
        let sample = simulate(&model, 55, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sample_dir(&sample, dir.path()).unwrap();
        let back = read_sample_dir(dir.path(), model.n_marks).unwrap();
        assert_eq!(back.grid_step, sample.grid_step);
        assert_eq!(back.covariates, sample.covariates);
        assert_eq!(back.events, sample.events);
    }

    #[test]
    fn csv_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("events.csv"), "wrong,header\n1,0.5\n").unwrap();
        std::fs::write(dir.path().join("covariates.csv"), "t,x1\n0,0\n0.5,0.1\n").unwrap();
        assert!(read_sample_dir(dir.path(), 1).is_err());
        std::fs::write(dir.path().join("events.csv"), "mark,time\n7,0.5\n").unwrap();
        assert!(read_sample_dir(dir.path(), 1).is_err()); // mark out of range
        std::fs::write(dir.path().join("events.csv"), "mark,time\n1,0.5\n").unwrap();
        std::fs::write(dir.path().join("covariates.csv"), "t,x1\n0,0\n0.5,zzz\n").unwrap();
        assert!(read_sample_dir(dir.path(), 1).is_err());
    }

    #[test]
    fn model_validation_catches_bad_grids() {
        let mut model = CoxModel::reference_model(10.0);
        model.grid_step = 0.3; // does not divide 10 evenly
        assert!(model.validate().is_err());
        let mut model = CoxModel::reference_model(10.0);
        model.ou_speeds[3] = -0.1;
        assert!(model.validate().is_err());
    }
}
