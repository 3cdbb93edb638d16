//! Fixed-horizon volatility model: `Y` accumulates increments with scalar
//! volatility `sigma(x, theta) = min(exp(theta' x), cap)` driven by an OU
//! covariate vector observed on the same grid. The quasi-log-likelihood is
//! the locally Gaussian contrast of the squared increments.

use crate::error::{Error, Result};
use crate::kahan::{KahanSum, KahanVec};
use crate::newton::{minimize, Loss, NewtonOptions};
use crate::seed::{replication_rng, STREAM_COVARIATES, STREAM_RESPONSE};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use std::sync::atomic::{AtomicBool, Ordering};
use std::fmt::Write as _;
use std::path::Path;

/// Clamp on `theta' x` magnitude inside guarded evaluations.
const LOG_SIGMA_GUARD: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    /// Parameter and covariate dimension.
    pub p: usize,
    /// Number of observation intervals n.
    pub n_steps: usize,
    /// Horizon T (the grid is t_i = i T / n).
    pub horizon: f64,
    /// Common OU mean-reversion speed of the covariates.
    pub ou_speed: f64,
    /// Common OU diffusion coefficient.
    pub ou_vol: f64,
    /// Volatility cap M0.
    pub sigma_cap: f64,
    pub theta_true: DVector<f64>,
}

impl DiffusionModel {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("p must be positive"));
        }
        if self.n_steps < 2 {
            return Err(Error::invalid("n_steps must be at least 2"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(self.ou_speed > 0.0 && self.ou_vol > 0.0) {
            return Err(Error::invalid("ou_speed and ou_vol must be positive"));
        }
        if !(self.sigma_cap > 0.0) {
            return Err(Error::invalid("sigma_cap must be positive"));
        }
        if self.theta_true.len() != self.p {
            return Err(Error::invalid("theta_true must have length p"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// The 10-covariate benchmark model used by the bundled reproduction
    /// scenarios (tables 3 and 4).
    pub fn reference_model(n_steps: usize) -> DiffusionModel {
        DiffusionModel {
            p: 10,
            n_steps,
            horizon: 1.0,
            ou_speed: 0.2,
            ou_vol: 0.5,
            sigma_cap: 1e5,
            theta_true: DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
        }
    }
}

/// Discrete observations `(X_{t_i}, Y_{t_i})`, rows `i = 0..=n`.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl DiffusionSample {
    pub fn n_steps(&self) -> usize {
        self.y.len() - 1
    }
}

/// Simulates covariates by exact OU transitions and the response by the
/// conditional-Gaussian increment coupling
/// `Y_{i+1} = Y_i + sigma(X_i, theta*) sqrt(h) xi_i` with response noise
/// independent of the covariate noise.
pub fn simulate(model: &DiffusionModel, base_seed: u64, replication: u64) -> Result<DiffusionSample> {
    model.validate()?;
    let n = model.n_steps;
    let h = model.step();
    let mut x_rng = replication_rng(base_seed, replication, STREAM_COVARIATES);
    let mut y_rng = replication_rng(base_seed, replication, STREAM_RESPONSE);

    let decay = (-model.ou_speed * h).exp();
    let step_sd = (model.ou_vol * model.ou_vol * (1.0 - (-2.0 * model.ou_speed * h).exp())
        / (2.0 * model.ou_speed))
        .sqrt();
    let x_noise = Normal::new(0.0, step_sd).expect("valid OU step variance");
    let mut x = DMatrix::zeros(n + 1, model.p);
    for i in 1..=n {
        for j in 0..model.p {
            x[(i, j)] = decay * x[(i - 1, j)] + x_noise.sample(&mut x_rng);
        }
    }

    let unit = Normal::new(0.0, 1.0).unwrap();
    let sqrt_h = h.sqrt();
    let mut y = DVector::zeros(n + 1);
    for i in 0..n {
        let mut s: f64 = 0.0;
        for j in 0..model.p {
            s += model.theta_true[j] * x[(i, j)];
        }
        let vol = s.exp().min(model.sigma_cap);
        y[i + 1] = y[i] + vol * sqrt_h * unit.sample(&mut y_rng);
    }
    Ok(DiffusionSample { x, y })
}

struct ContrastTerms {
    value: f64,
    gradient: Option<DVector<f64>>,
    hessian: Option<DMatrix<f64>>,
    clamped: bool,
    capped_cells: usize,
}

/// Precomputed evaluation state: cell-major covariates and normalized squared
/// increments `(dY_i)^2 / h`.
struct DiffusionKernel {
    p: usize,
    n: usize,
    log_cap: f64,
    cells: Vec<f64>,
    ratios: Vec<f64>,
}

impl DiffusionKernel {
    fn new(model: &DiffusionModel, sample: &DiffusionSample) -> Result<Self> {
        let p = model.p;
        let n = sample.n_steps();
        if sample.x.nrows() != n + 1 || sample.x.ncols() != p {
            return Err(Error::invalid("sample dimensions do not match the model"));
        }
        let h = model.horizon / n as f64;
        let mut cells = vec![0.0f64; n * p];
        for j in 0..p {
            for i in 0..n {
                cells[i * p + j] = sample.x[(i, j)];
            }
        }
        let ratios: Vec<f64> = (0..n)
            .map(|i| {
                let dy = sample.y[i + 1] - sample.y[i];
                dy * dy / h
            })
            .collect();
        Ok(DiffusionKernel { p, n, log_cap: model.sigma_cap.ln(), cells, ratios })
    }

    fn terms(
        &self,
        theta: &DVector<f64>,
        clamp: Option<f64>,
        want_gradient: bool,
        want_hessian: bool,
    ) -> Result<ContrastTerms> {
        let p = self.p;
        if theta.len() != p {
            return Err(Error::invalid(format!("theta has length {}, expected {p}", theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta must be finite"));
        }
        let theta_s = theta.as_slice();

        let mut value = KahanSum::default();
        let mut gradient = want_gradient.then(|| KahanVec::zeros(p));
        let mut hess_local = want_hessian.then(|| vec![0.0f64; p * p]);
        let mut clamped = false;
        let mut capped_cells = 0usize;

        for i in 0..self.n {
            let x = &self.cells[i * p..(i + 1) * p];
            let mut s = 0.0;
            for j in 0..p {
                s += theta_s[j] * x[j];
            }
            if let Some(bound) = clamp {
                if s.abs() > bound {
                    s = s.clamp(-bound, bound);
                    clamped = true;
                }
            }
            let ratio = self.ratios[i];
            if s >= self.log_cap {
                // Volatility sits on the cap: S is locally constant in theta.
                capped_cells += 1;
                value.add(-0.5 * (2.0 * self.log_cap + ratio * (-2.0 * self.log_cap).exp()));
                continue;
            }
            let e = (-2.0 * s).exp();
            value.add(-0.5 * (2.0 * s + ratio * e));
            if let Some(g) = gradient.as_mut() {
                let coeff = -(1.0 - ratio * e);
                for j in 0..p {
                    g.add(j, coeff * x[j]);
                }
            }
            if let Some(hm) = hess_local.as_mut() {
                let coeff = -2.0 * ratio * e;
                for j in 0..p {
                    let cxj = coeff * x[j];
                    let row = &mut hm[j * p..j * p + p];
                    for k in j..p {
                        row[k] += cxj * x[k];
                    }
                }
            }
        }
        let hessian = hess_local.map(|hm| {
            let mut out = DMatrix::zeros(p, p);
            for a in 0..p {
                for b in a..p {
                    out[(a, b)] = hm[a * p + b];
                    out[(b, a)] = hm[a * p + b];
                }
            }
            out
        });
        Ok(ContrastTerms {
            value: value.value(),
            gradient: gradient.map(KahanVec::into_vector),
            hessian,
            clamped,
            capped_cells,
        })
    }
}

fn contrast_terms(
    model: &DiffusionModel,
    sample: &DiffusionSample,
    theta: &DVector<f64>,
    clamp: Option<f64>,
    want_gradient: bool,
    want_hessian: bool,
) -> Result<ContrastTerms> {
    DiffusionKernel::new(model, sample)?.terms(theta, clamp, want_gradient, want_hessian)
}

/// Quasi-log-likelihood of the locally Gaussian contrast.
pub fn quasi_loglik_h(model: &DiffusionModel, sample: &DiffusionSample, theta: &DVector<f64>) -> Result<f64> {
    Ok(contrast_terms(model, sample, theta, None, false, false)?.value)
}

pub fn quasi_loglik_h_gradient(
    model: &DiffusionModel,
    sample: &DiffusionSample,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(contrast_terms(model, sample, theta, None, true, false)?.gradient.unwrap())
}

pub fn quasi_loglik_h_hessian(
    model: &DiffusionModel,
    sample: &DiffusionSample,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    Ok(contrast_terms(model, sample, theta, None, false, true)?.hessian.unwrap())
}

/// Number of cells where the volatility cap binds at `theta`. Expected to be
/// zero at the benchmark settings.
pub fn capped_cells(model: &DiffusionModel, sample: &DiffusionSample, theta: &DVector<f64>) -> Result<usize> {
    Ok(contrast_terms(model, sample, theta, None, false, false)?.capped_cells)
}

/// Negated contrast as a minimization target.
pub struct DiffusionLoss {
    kernel: DiffusionKernel,
    clamp_hit: AtomicBool,
}

impl DiffusionLoss {
    pub fn new(model: &DiffusionModel, sample: &DiffusionSample) -> Result<Self> {
        Ok(DiffusionLoss {
            kernel: DiffusionKernel::new(model, sample)?,
            clamp_hit: AtomicBool::new(false),
        })
    }

    pub fn clamp_was_hit(&self) -> bool {
        self.clamp_hit.load(Ordering::Relaxed)
    }
}

impl Loss for DiffusionLoss {
    fn dim(&self) -> usize {
        self.kernel.p
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
        match self.kernel.terms(theta, Some(LOG_SIGMA_GUARD), false, false) {
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
    pub clamped: bool,
}

/// Quasi-maximum-likelihood estimate by damped Newton from the origin.
pub fn qmle_h(
    model: &DiffusionModel,
    sample: &DiffusionSample,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<QmleReport> {
    let loss = DiffusionLoss::new(model, sample)?;
    let report = minimize(&loss, &DVector::zeros(model.p), lower, upper, &NewtonOptions::default())?;
    if !report.converged {
        return Err(Error::numerical(format!(
            "volatility QMLE did not converge: gradient norm {:.3e} after {} iterations",
            report.grad_norm, report.iterations
        )));
    }
    let grad = loss.gradient(&report.theta);
    for j in 0..report.theta.len() {
        let at_upper = report.theta[j] >= upper[j] - 1e-8;
        let at_lower = report.theta[j] <= lower[j] + 1e-8;
        if (at_upper && grad[j] < -1e-8) || (at_lower && grad[j] > 1e-8) {
            return Err(Error::numerical(
                "volatility QMLE diverges to the parameter box boundary".to_string(),
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

/// Weighting matrix `-(1/n) d^2 H(theta)` if positive definite, plus `(1/n) I`.
pub fn g_hat_n(model: &DiffusionModel, sample: &DiffusionSample, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = model.p;
    let n = sample.n_steps() as f64;
    let h = quasi_loglik_h_hessian(model, sample, theta)?;
    let m = -h / n;
    let mut out = DMatrix::identity(p, p) / n;
    if Cholesky::new(m.clone()).is_some() {
        out += m;
    }
    Ok(out)
}

/// Writes the sample as CSV with header `t,y,x1..xp`.
pub fn write_sample_csv(model: &DiffusionModel, sample: &DiffusionSample, path: &Path) -> Result<()> {
    let h = model.horizon / sample.n_steps() as f64;
    let mut out = String::from("t,y");
    for j in 1..=model.p {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for i in 0..=sample.n_steps() {
        let _ = write!(out, "{},{}", i as f64 * h, sample.y[i]);
        for j in 0..model.p {
            let _ = write!(out, ",{}", sample.x[(i, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::data(format!("write {}: {e}", path.display())))
}

/// Reads a sample written by [`write_sample_csv`].
pub fn read_sample_csv(path: &Path) -> Result<DiffusionSample> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("sample file is empty"))?;
    let p = header.split(',').count().saturating_sub(2);
    if p == 0 {
        return Err(Error::data("sample header must be t,y,x1..xp"));
    }
    let mut ys = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 2 {
            return Err(Error::data(format!(
                "sample line {}: expected {} fields, got {}",
                lineno + 2,
                p + 2,
                fields.len()
            )));
        }
        let y: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("sample line {}: bad y", lineno + 2)))?;
        ys.push(y);
        for f in &fields[2..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::data(format!("sample line {}: bad x", lineno + 2)))?;
            xs.push(v);
        }
    }
    if ys.len() < 3 {
        return Err(Error::data("sample needs at least three observations"));
    }
    let rows = ys.len();
    Ok(DiffusionSample {
        x: DMatrix::from_fn(rows, p, |i, j| xs[i * p + j]),
        y: DVector::from_vec(ys),
    })
}
