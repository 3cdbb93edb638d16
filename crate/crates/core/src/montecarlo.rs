//! Replication harness: simulate, fit the initial estimator, run the
//! penalized selection and the two-stage refit per replication, and aggregate
//! selection percentages and per-coordinate statistics.
//!
//! Determinism contract: replication `i` draws from streams keyed by
//! `(base_seed, i)` only, every tuning inside a replication consumes the same
//! dataset and initial estimate (paired comparison), and aggregation is a
//! sequential reduce in replication order, so results are bit-identical
//! across runs and thread counts.

use crate::cox::{self, CoxLoss, CoxModel};
use crate::diffusion::{self, DiffusionLoss, DiffusionModel};
use crate::error::{Error, Result};
use crate::lsa::{solve_cd, solve_separable, LsaProblem, SolveOptions};
use crate::newton::Loss;
use crate::penalty::{compute_weights, TuningConfig, WeightVector};
use crate::po::po_estimate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Which application model the harness drives. The model acts as a template:
/// the size grid overrides the horizon (point process) or the number of
/// observation steps (diffusion).
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Cox(CoxModel),
    Diffusion(DiffusionModel),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Cox(m) => m.dim(),
            ModelSpec::Diffusion(m) => m.p,
        }
    }

    pub fn theta_true(&self) -> DVector<f64> {
        match self {
            ModelSpec::Cox(m) => m.theta_true_flat(),
            ModelSpec::Diffusion(m) => m.theta_true.clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Cox(_) => "cox",
            ModelSpec::Diffusion(_) => "diffusion",
        }
    }

    fn at_size(&self, size: f64) -> Result<ModelSpec> {
        match self {
            ModelSpec::Cox(m) => {
                if !(size > 0.0) {
                    return Err(Error::invalid(format!("horizon must be positive, got {size}")));
                }
                let mut model = m.clone();
                model.horizon = size;
                model.validate()?;
                Ok(ModelSpec::Cox(model))
            }
            ModelSpec::Diffusion(m) => {
                if !(size >= 2.0 && size.fract() == 0.0) {
                    return Err(Error::invalid(format!(
                        "step count must be an integer >= 2, got {size}"
                    )));
                }
                let mut model = m.clone();
                model.n_steps = size as usize;
                model.validate()?;
                Ok(ModelSpec::Diffusion(model))
            }
        }
    }

    /// Convergence rate of the initial estimator at a given size:
    /// `T^{-1/2}` for the point process and `n^{-1/2}` for the diffusion.
    pub fn rate_at(&self, size: f64) -> f64 {
        1.0 / size.sqrt()
    }
}

/// Named tuning triplet; the rate is filled in per size.
#[derive(Debug, Clone)]
pub struct TuningSpec {
    pub name: String,
    pub gamma: f64,
    pub r: f64,
    pub q: f64,
}

impl TuningSpec {
    pub fn new(name: impl Into<String>, gamma: f64, r: f64, q: f64) -> Self {
        TuningSpec { name: name.into(), gamma, r, q }
    }

    pub fn config_at(&self, rate: f64) -> Result<TuningConfig> {
        TuningConfig::new(self.gamma, self.r, self.q, rate)
    }
}

/// Choice of the weighting matrix in the penalized objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GChoice {
    Identity,
    Hessian,
    Moment,
}

impl GChoice {
    pub fn parse(s: &str) -> Result<GChoice> {
        match s {
            "identity" => Ok(GChoice::Identity),
            "hessian" => Ok(GChoice::Hessian),
            "moment" => Ok(GChoice::Moment),
            other => Err(Error::data(format!("unknown g_matrix `{other}`"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GChoice::Identity => "identity",
            GChoice::Hessian => "hessian",
            GChoice::Moment => "moment",
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub model: ModelSpec,
    pub tunings: Vec<TuningSpec>,
    pub reps: usize,
    pub base_seed: u64,
    pub sizes: Vec<f64>,
    pub g_choice: GChoice,
    pub box_lower: f64,
    pub box_upper: f64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.tunings.is_empty() {
            return Err(Error::invalid("at least one tuning is required"));
        }
        let mut names: Vec<&str> = self.tunings.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.tunings.len() {
            return Err(Error::invalid("tuning names must be unique"));
        }
        if !(self.box_lower < self.box_upper) {
            return Err(Error::invalid("box_lower must be below box_upper"));
        }
        for t in &self.tunings {
            // Constructing a config surfaces gamma/q violations early.
            t.config_at(0.5)?;
        }
        for &s in &self.sizes {
            self.model.at_size(s)?;
        }
        Ok(())
    }

    /// Warnings for tunings outside the selection-consistency window
    /// `1 < r < 2 - q + gamma`; such configs run, but the guarantees of the
    /// theory do not cover them.
    pub fn window_warnings(&self) -> Vec<String> {
        self.tunings
            .iter()
            .filter(|t| !(t.r > 1.0 && t.r < 2.0 - t.q + t.gamma))
            .map(|t| {
                format!(
                    "tuning `{}`: r = {} outside the window (1, {}) = (1, 2 - q + gamma); selection guarantees do not apply",
                    t.name,
                    t.r,
                    2.0 - t.q + t.gamma
                )
            })
            .collect()
    }

    /// Benchmark scenario: point-process variable selection across horizons.
    pub fn table1(reps: usize, base_seed: u64) -> McConfig {
        McConfig {
            model: ModelSpec::Cox(CoxModel::reference_model(200.0)),
            tunings: vec![
                TuningSpec::new("p-LSA", 1.0, 1.2, 0.3),
                TuningSpec::new("unified-LASSO", 1.0, 1.2, 1.0),
                TuningSpec::new("bridge", 0.0, 1.0, 0.3),
            ],
            reps,
            base_seed,
            sizes: vec![50.0, 100.0, 200.0, 400.0],
            g_choice: GChoice::Identity,
            box_lower: -10.0,
            box_upper: 10.0,
        }
    }

    /// Benchmark scenario: point-process estimate summary at horizon 200.
    pub fn table2(reps: usize, base_seed: u64) -> McConfig {
        McConfig {
            model: ModelSpec::Cox(CoxModel::reference_model(200.0)),
            tunings: vec![TuningSpec::new("p-LSA", 1.0, 1.2, 0.3)],
            reps,
            base_seed,
            sizes: vec![200.0],
            g_choice: GChoice::Identity,
            box_lower: -10.0,
            box_upper: 10.0,
        }
    }

    /// Benchmark scenario: diffusion variable selection across step counts.
    pub fn table3(reps: usize, base_seed: u64) -> McConfig {
        McConfig {
            model: ModelSpec::Diffusion(DiffusionModel::reference_model(10000)),
            tunings: vec![
                TuningSpec::new("p-LSA", 3.2, 1.2, 0.3),
                TuningSpec::new("unified-LASSO", 3.2, 1.2, 1.0),
                TuningSpec::new("bridge", 0.0, 1.0, 0.3),
            ],
            reps,
            base_seed,
            sizes: vec![2500.0, 5000.0, 10000.0, 20000.0],
            g_choice: GChoice::Identity,
            box_lower: -10.0,
            box_upper: 10.0,
        }
    }

    /// Benchmark scenario: diffusion estimate summary at 10000 steps.
    pub fn table4(reps: usize, base_seed: u64) -> McConfig {
        McConfig {
            model: ModelSpec::Diffusion(DiffusionModel::reference_model(10000)),
            tunings: vec![TuningSpec::new("p-LSA", 3.2, 1.2, 0.3)],
            reps,
            base_seed,
            sizes: vec![10000.0],
            g_choice: GChoice::Identity,
            box_lower: -10.0,
            box_upper: 10.0,
        }
    }
}

/// One replication's estimates under one tuning.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub theta_tilde: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub theta_check: DVector<f64>,
    pub active: Vec<bool>,
    pub bound_holds: bool,
    pub po_converged: bool,
}

/// One row of `records.csv`.
#[derive(Debug, Clone)]
pub struct RecordRow {
    pub size: f64,
    pub rep: u64,
    pub tuning: String,
    pub coordinate: usize,
    pub theta_tilde: f64,
    pub theta_hat: f64,
    pub theta_check: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CoordStat {
    pub mean: f64,
    pub sd: f64,
}

/// Aggregated statistics for one (tuning, size) cell.
#[derive(Debug, Clone)]
pub struct TuningSizeSummary {
    pub tuning: String,
    pub size: f64,
    pub selection_pct: f64,
    pub initial: Vec<CoordStat>,
    pub plsa: Vec<CoordStat>,
    pub po: Vec<CoordStat>,
    /// Percentage of replications with an exact zero at each coordinate
    /// (penalized estimator).
    pub zero_pct: Vec<f64>,
    pub reps_used: usize,
    pub reps_failed: usize,
    pub po_nonconverged: usize,
    pub bound_violations: usize,
    /// Set when SDs are reported as zero by convention (fewer than 2 reps).
    pub degenerate_sd: bool,
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub model_label: String,
    pub g_label: String,
    pub dim: usize,
    pub theta_true: Vec<f64>,
    pub tunings: Vec<TuningSpec>,
    pub sizes: Vec<f64>,
    pub entries: Vec<TuningSizeSummary>,
}

impl McSummary {
    pub fn entry(&self, tuning: &str, size: f64) -> Option<&TuningSizeSummary> {
        self.entries.iter().find(|e| e.tuning == tuning && e.size == size)
    }
}

#[derive(Debug, Clone)]
pub struct McRun {
    pub summary: McSummary,
    pub records: Vec<RecordRow>,
    pub warnings: Vec<String>,
}

enum RepOutcome {
    Ok { records: Vec<EstimateRecord> },
    Failed { reason: String },
}

fn spectral_norms(g: &DMatrix<f64>) -> (f64, f64) {
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(f64::MIN, |m, v| m.max(*v));
    let min = eig.eigenvalues.iter().fold(f64::MAX, |m, v| m.min(*v));
    (max, 1.0 / min)
}

/// Finite-sample consistency bound derived from minimality of the penalized
/// estimator: with u = (theta_hat - theta_star)/rate it holds that
/// |u| <= |G^{-1}| (2 |G| |(theta_tilde - theta_star)/rate| + p0 K* a_T/rate).
fn consistency_bound_holds(
    theta_hat: &DVector<f64>,
    theta_tilde: &DVector<f64>,
    theta_star: &DVector<f64>,
    weights: &WeightVector,
    true_active: &[bool],
    q: f64,
    rate: f64,
    g_norms: (f64, f64),
) -> bool {
    let p0 = true_active.iter().filter(|a| **a).count();
    if p0 == 0 {
        return true;
    }
    let (a_t, _) = weights.active_bounds(true_active);
    let a_t = a_t.expect("nonempty active set");
    let k_star = theta_star
        .iter()
        .zip(true_active)
        .filter(|(_, &act)| act)
        .map(|(v, _)| v.abs().powf(q - 1.0))
        .fold(f64::MIN, f64::max);
    let lhs = (theta_hat - theta_star).norm() / rate;
    let (g_norm, g_inv_norm) = g_norms;
    let rhs = g_inv_norm * (2.0 * g_norm * (theta_tilde - theta_star).norm() / rate + p0 as f64 * k_star * a_t / rate);
    lhs <= rhs * (1.0 + 1e-9) + 1e-12
}

fn run_replication(
    cfg: &McConfig,
    model: &ModelSpec,
    size: f64,
    rep: u64,
) -> RepOutcome {
    let p = model.dim();
    let lower = DVector::from_element(p, cfg.box_lower);
    let upper = DVector::from_element(p, cfg.box_upper);
    let theta_star = model.theta_true();
    let true_active: Vec<bool> = theta_star.iter().map(|v| *v != 0.0).collect();
    let rate = model.rate_at(size);

    // Simulate and fit the initial estimator; build the loss for the refit.
    enum AppLoss {
        Cox(CoxLoss),
        Diffusion(DiffusionLoss),
    }
    impl AppLoss {
        fn as_dyn(&self) -> &dyn Loss {
            match self {
                AppLoss::Cox(l) => l,
                AppLoss::Diffusion(l) => l,
            }
        }
    }

    let fit = (|| -> Result<(DVector<f64>, AppLoss, Option<DMatrix<f64>>)> {
        match model {
            ModelSpec::Cox(m) => {
                let sample = cox::simulate(m, cfg.base_seed, rep)?;
                let tilde = cox::qmle(m, &sample, &DVector::zeros(p), &lower, &upper)?.theta;
                let g = match cfg.g_choice {
                    GChoice::Identity => None,
                    GChoice::Hessian => Some(cox::g_hat_hessian(m, &sample, &tilde)?),
                    GChoice::Moment => Some(cox::g_hat_moment(m, &sample, &tilde)?),
                };
                let loss = CoxLoss::new(m, &sample)?;
                Ok((tilde, AppLoss::Cox(loss), g))
            }
            ModelSpec::Diffusion(m) => {
                let sample = diffusion::simulate(m, cfg.base_seed, rep)?;
                let tilde = diffusion::qmle_h(m, &sample, &lower, &upper)?.theta;
                let g = match cfg.g_choice {
                    GChoice::Identity => None,
                    GChoice::Hessian | GChoice::Moment => {
                        Some(diffusion::g_hat_n(m, &sample, &tilde)?)
                    }
                };
                let loss = DiffusionLoss::new(m, &sample)?;
                Ok((tilde, AppLoss::Diffusion(loss), g))
            }
        }
    })();
    let (theta_tilde, loss, g_matrix) = match fit {
        Ok(v) => v,
        Err(e) => return RepOutcome::Failed { reason: e.to_string() },
    };
    let g_norms = g_matrix.as_ref().map(spectral_norms).unwrap_or((1.0, 1.0));

    let mut records = Vec::with_capacity(cfg.tunings.len());
    for tuning in &cfg.tunings {
        let result = (|| -> Result<EstimateRecord> {
            let tcfg = tuning.config_at(rate)?;
            let weights = compute_weights(&theta_tilde, &tcfg)?;
            let g_hat = match &g_matrix {
                None => DMatrix::identity(p, p),
                Some(g) => g.clone(),
            };
            let problem = LsaProblem::new(
                theta_tilde.clone(),
                g_hat,
                weights.clone(),
                tcfg.q,
                lower.clone(),
                upper.clone(),
            )?;
            let solution = match cfg.g_choice {
                GChoice::Identity => solve_separable(&problem)?,
                _ => solve_cd(&problem, &SolveOptions::default())?,
            };
            let po = po_estimate(&theta_tilde, &tcfg, loss.as_dyn(), &lower, &upper)?;
            let bound_holds = consistency_bound_holds(
                &solution.theta_hat,
                &theta_tilde,
                &theta_star,
                &weights,
                &true_active,
                tcfg.q,
                rate,
                g_norms,
            );
            Ok(EstimateRecord {
                theta_tilde: theta_tilde.clone(),
                theta_hat: solution.theta_hat,
                theta_check: po.theta_check,
                active: solution.active,
                bound_holds,
                po_converged: po.refit_converged,
            })
        })();
        match result {
            Ok(rec) => records.push(rec),
            Err(e) => return RepOutcome::Failed { reason: e.to_string() },
        }
    }
    RepOutcome::Ok { records }
}

fn mean_sd(values: &[f64]) -> CoordStat {
    let n = values.len();
    if n == 0 {
        return CoordStat::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return CoordStat { mean, sd: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    CoordStat { mean, sd: var.sqrt() }
}

/// Runs the replication grid. Replications execute in parallel under the
/// current rayon pool; outputs are independent of the pool size.
pub fn run_mc(cfg: &McConfig) -> Result<McRun> {
    cfg.validate()?;
    let theta_star = cfg.model.theta_true();
    let true_active: Vec<bool> = theta_star.iter().map(|v| *v != 0.0).collect();
    let p = cfg.model.dim();

    let mut entries = Vec::new();
    let mut records_out: Vec<RecordRow> = Vec::new();

    for &size in &cfg.sizes {
        let model = cfg.model.at_size(size)?;
        let outcomes: Vec<RepOutcome> = (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| run_replication(cfg, &model, size, rep))
            .collect();

        let failed: Vec<&str> = outcomes
            .iter()
            .filter_map(|o| match o {
                RepOutcome::Failed { reason } => Some(reason.as_str()),
                _ => None,
            })
            .collect();
        if failed.len() * 20 > cfg.reps {
            return Err(Error::numerical(format!(
                "size {size}: {} of {} replications failed (> 5%); first failure: {}",
                failed.len(),
                cfg.reps,
                failed[0]
            )));
        }

        for (t_idx, tuning) in cfg.tunings.iter().enumerate() {
            let recs: Vec<&EstimateRecord> = outcomes
                .iter()
                .filter_map(|o| match o {
                    RepOutcome::Ok { records } => Some(&records[t_idx]),
                    _ => None,
                })
                .collect();
            let used = recs.len();
            let mut selected = 0usize;
            let mut bound_violations = 0usize;
            let mut po_nonconverged = 0usize;
            for r in &recs {
                if r.active == true_active {
                    selected += 1;
                }
                if !r.bound_holds {
                    bound_violations += 1;
                }
                if !r.po_converged {
                    po_nonconverged += 1;
                }
            }
            let mut initial = Vec::with_capacity(p);
            let mut plsa = Vec::with_capacity(p);
            let mut po = Vec::with_capacity(p);
            let mut zero_pct = Vec::with_capacity(p);
            for j in 0..p {
                let tilde: Vec<f64> = recs.iter().map(|r| r.theta_tilde[j]).collect();
                let hat: Vec<f64> = recs.iter().map(|r| r.theta_hat[j]).collect();
                let check: Vec<f64> = recs.iter().map(|r| r.theta_check[j]).collect();
                initial.push(mean_sd(&tilde));
                plsa.push(mean_sd(&hat));
                po.push(mean_sd(&check));
                let zeros = recs.iter().filter(|r| r.theta_hat[j] == 0.0).count();
                zero_pct.push(if used == 0 { 0.0 } else { 100.0 * zeros as f64 / used as f64 });
            }
            entries.push(TuningSizeSummary {
                tuning: tuning.name.clone(),
                size,
                selection_pct: if used == 0 { 0.0 } else { 100.0 * selected as f64 / used as f64 },
                initial,
                plsa,
                po,
                zero_pct,
                reps_used: used,
                reps_failed: failed.len(),
                po_nonconverged,
                bound_violations,
                degenerate_sd: used < 2,
            });
        }

        // Records in replication order, then tuning, then coordinate.
        for (rep, outcome) in outcomes.iter().enumerate() {
            if let RepOutcome::Ok { records } = outcome {
                for (t_idx, tuning) in cfg.tunings.iter().enumerate() {
                    let r = &records[t_idx];
                    for j in 0..p {
                        records_out.push(RecordRow {
                            size,
                            rep: rep as u64,
                            tuning: tuning.name.clone(),
                            coordinate: j,
                            theta_tilde: r.theta_tilde[j],
                            theta_hat: r.theta_hat[j],
                            theta_check: r.theta_check[j],
                            active: r.active[j],
                        });
                    }
                }
            }
        }
    }

    Ok(McRun {
        summary: McSummary {
            model_label: cfg.model.label().to_string(),
            g_label: cfg.g_choice.label().to_string(),
            dim: p,
            theta_true: theta_star.iter().copied().collect(),
            tunings: cfg.tunings.clone(),
            sizes: cfg.sizes.clone(),
            entries,
        },
        records: records_out,
        warnings: cfg.window_warnings(),
    })
}

/// Full-precision CSV of the aggregated summary, one row per
/// (tuning, size, coordinate).
pub fn render_summary_csv(summary: &McSummary) -> String {
    let mut out = String::from(
        "tuning,size,coordinate,true_value,initial_mean,initial_sd,plsa_mean,plsa_sd,po_mean,po_sd,plsa_zero_pct,selection_pct,reps_used,reps_failed,po_nonconverged,bound_violations,degenerate_sd\n",
    );
    for e in &summary.entries {
        for j in 0..summary.dim {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.tuning,
                e.size,
                j + 1,
                summary.theta_true[j],
                e.initial[j].mean,
                e.initial[j].sd,
                e.plsa[j].mean,
                e.plsa[j].sd,
                e.po[j].mean,
                e.po[j].sd,
                e.zero_pct[j],
                e.selection_pct,
                e.reps_used,
                e.reps_failed,
                e.po_nonconverged,
                e.bound_violations,
                e.degenerate_sd
            );
        }
    }
    out
}

/// Full-precision CSV with one row per replication, tuning and coordinate.
pub fn render_records_csv(records: &[RecordRow]) -> String {
    let mut out =
        String::from("size,rep,tuning,coordinate,theta_tilde,theta_hat,theta_check,active\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.size,
            r.rep,
            r.tuning,
            r.coordinate + 1,
            r.theta_tilde,
            r.theta_hat,
            r.theta_check,
            u8::from(r.active)
        );
    }
    out
}

/// Markdown rendering in the benchmark-table layout: a selection table over
/// sizes, then per-size estimate summaries for the first tuning with
/// 4-decimal means, parenthesized SDs and a correct-decision row.
pub fn render_tables(summary: &McSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Selection results ({} model)\n", summary.model_label);
    let _ = write!(out, "| estimator | (gamma, r, q) |");
    for s in &summary.sizes {
        let _ = write!(out, " size={s} |");
    }
    out.push('\n');
    let _ = write!(out, "|---|---|");
    for _ in &summary.sizes {
        let _ = write!(out, "---|");
    }
    out.push('\n');
    for t in &summary.tunings {
        let _ = write!(out, "| %({}) | ({}, {}, {}) |", t.name, t.gamma, t.r, t.q);
        for &s in &summary.sizes {
            match summary.entry(&t.name, s) {
                Some(e) => {
                    let _ = write!(out, " {:.1} |", e.selection_pct);
                }
                None => {
                    let _ = write!(out, " - |");
                }
            }
        }
        out.push('\n');
    }

    if let Some(first) = summary.tunings.first() {
        for &s in &summary.sizes {
            let Some(e) = summary.entry(&first.name, s) else { continue };
            let _ = writeln!(
                out,
                "\n# Estimate summary ({} model, size={}, tuning {})\n",
                summary.model_label, s, first.name
            );
            if e.degenerate_sd {
                let _ = writeln!(out, "Note: SDs reported as 0 by convention (fewer than 2 replications).\n");
            }
            let chunk = 10usize;
            let mut start = 0;
            while start < summary.dim {
                let end = (start + chunk).min(summary.dim);
                let _ = write!(out, "| |");
                for j in start..end {
                    let _ = write!(out, " theta_{} |", j + 1);
                }
                out.push('\n');
                let _ = write!(out, "|---|");
                for _ in start..end {
                    let _ = write!(out, "---|");
                }
                out.push('\n');
                let _ = write!(out, "| true |");
                for j in start..end {
                    let _ = write!(out, " {} |", summary.theta_true[j]);
                }
                out.push('\n');
                for (label, stats) in
                    [("initial", &e.initial), ("p-LSA", &e.plsa), ("P-O", &e.po)]
                {
                    let _ = write!(out, "| {label} |");
                    for j in start..end {
                        let _ = write!(out, " {:.4} ({:.4}) |", stats[j].mean, stats[j].sd);
                    }
                    out.push('\n');
                }
                // Correct-decision percentage: zero kept at true zeros,
                // nonzero kept at true actives.
                let _ = write!(out, "| %({}) |", first.name);
                for j in start..end {
                    let correct = if summary.theta_true[j] == 0.0 {
                        e.zero_pct[j]
                    } else {
                        100.0 - e.zero_pct[j]
                    };
                    let _ = write!(out, " {correct:.1} |");
                }
                out.push('\n');
                start = end;
            }
        }
    }
    out
}

fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut kv: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::data(format!("config line {}: expected key = value", lineno + 1)));
        };
        kv.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(kv)
}

/// Parses only the model section of a configuration file (used by commands
/// that take the harness settings from flags instead).
pub fn parse_model_config(text: &str) -> Result<ModelSpec> {
    let kv = parse_kv(text)?;
    parse_model(&kv)
}

fn parse_model(kv: &[(String, String)]) -> Result<ModelSpec> {
    let get = |key: &str| -> Option<&str> {
        kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    };
    let require = |key: &str| -> Result<&str> {
        get(key).ok_or_else(|| Error::data(format!("config is missing required key `{key}`")))
    };
    let parse_num = |key: &str, v: &str| -> Result<f64> {
        v.parse::<f64>().map_err(|_| Error::data(format!("config key `{key}`: bad number `{v}`")))
    };
    let num = |key: &str| -> Result<f64> { parse_num(key, require(key)?) };
    let num_or = |key: &str, default: f64| -> Result<f64> {
        match get(key) {
            Some(v) => parse_num(key, v),
            None => Ok(default),
        }
    };
    let list = |key: &str| -> Result<Vec<f64>> {
        require(key)?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("config key `{key}`: bad number `{s}`")))
            })
            .collect()
    };

    match require("model")? {
        "cox" => {
            let n_marks = num_or("n_marks", 1.0)? as usize;
            let n_covariates = num("n_covariates")? as usize;
            let speeds = list("ou_speeds")?;
            let theta = list("theta_true")?;
            if theta.len() != n_marks * n_covariates {
                return Err(Error::data(format!(
                    "theta_true needs {} entries (n_marks * n_covariates), got {}",
                    n_marks * n_covariates,
                    theta.len()
                )));
            }
            let model = CoxModel {
                n_marks,
                n_covariates,
                ou_speeds: speeds,
                ou_vol: num("ou_vol")?,
                horizon: num("horizon")?,
                grid_step: num("grid_step")?,
                theta_true: DMatrix::from_fn(n_marks, n_covariates, |a, j| theta[a * n_covariates + j]),
            };
            model.validate().map_err(|e| Error::data(e.to_string()))?;
            Ok(ModelSpec::Cox(model))
        }
        "diffusion" => {
            let p = num("p")? as usize;
            let theta = list("theta_true")?;
            if theta.len() != p {
                return Err(Error::data(format!("theta_true needs {p} entries, got {}", theta.len())));
            }
            let model = DiffusionModel {
                p,
                n_steps: num("n_steps")? as usize,
                horizon: num_or("horizon", 1.0)?,
                ou_speed: num("ou_speed")?,
                ou_vol: num("ou_vol")?,
                sigma_cap: num_or("sigma_cap", 1e5)?,
                theta_true: DVector::from_vec(theta),
            };
            model.validate().map_err(|e| Error::data(e.to_string()))?;
            Ok(ModelSpec::Diffusion(model))
        }
        other => Err(Error::data(format!("unknown model `{other}`"))),
    }
}

/// Parses the flat `key = value` configuration format.
///
/// Shared keys: `model` (cox|diffusion), `sizes`, `reps`, `base_seed`,
/// `g_matrix` (identity|hessian|moment), `tuning` (repeatable,
/// `name:gamma:r:q`), `box_lower`, `box_upper`.
/// Cox keys: `n_marks`, `n_covariates`, `ou_speeds`, `ou_vol`, `grid_step`,
/// `horizon`, `theta_true`. Diffusion keys: `p`, `n_steps`, `horizon`,
/// `ou_speed`, `ou_vol`, `sigma_cap`, `theta_true`.
pub fn parse_config(text: &str) -> Result<McConfig> {
    let kv = parse_kv(text)?;
    let model = parse_model(&kv)?;
    let get = |key: &str| -> Option<&str> {
        kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    };
    let parse_num = |key: &str, v: &str| -> Result<f64> {
        v.parse::<f64>().map_err(|_| Error::data(format!("config key `{key}`: bad number `{v}`")))
    };
    let num_or = |key: &str, default: f64| -> Result<f64> {
        match get(key) {
            Some(v) => parse_num(key, v),
            None => Ok(default),
        }
    };

    let mut tunings = Vec::new();
    for (k, v) in &kv {
        if k == "tuning" {
            let parts: Vec<&str> = v.split(':').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::data(format!("tuning `{v}`: expected name:gamma:r:q")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::data(format!("tuning `{v}`: bad number `{s}`")))
            };
            tunings.push(TuningSpec::new(parts[0], parse(parts[1])?, parse(parts[2])?, parse(parts[3])?));
        }
    }
    if tunings.is_empty() {
        return Err(Error::data("config needs at least one `tuning = name:gamma:r:q` line"));
    }

    let sizes = match get("sizes") {
        Some(v) => v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("config key `sizes`: bad number `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?,
        None => match &model {
            ModelSpec::Cox(m) => vec![m.horizon],
            ModelSpec::Diffusion(m) => vec![m.n_steps as f64],
        },
    };

    let cfg = McConfig {
        model,
        tunings,
        reps: num_or("reps", 200.0)? as usize,
        base_seed: num_or("base_seed", 1.0)? as u64,
        sizes,
        g_choice: GChoice::parse(get("g_matrix").unwrap_or("identity"))
            .map_err(|e| Error::data(e.to_string()))?,
        box_lower: num_or("box_lower", -10.0)?,
        box_upper: num_or("box_upper", 10.0)?,
    };
    cfg.validate().map_err(|e| Error::data(e.to_string()))?;
    Ok(cfg)
}
