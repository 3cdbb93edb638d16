//! Penalized least-squares-approximation (LSA) estimation with adaptive L^q
//! penalties, the two-stage select-then-refit estimator, and two stochastic
//! process applications: a Cox-type point process with ergodic
//! Ornstein-Uhlenbeck covariates and a fixed-horizon diffusion volatility
//! model. A Monte Carlo harness reproduces the reference variable-selection
//! and estimation tables at configurable scale.

pub mod cox;
pub mod diffusion;
pub mod error;
pub(crate) mod kahan;
pub mod lsa;
pub mod montecarlo;
pub mod newton;
pub mod penalty;
pub mod po;
pub mod seed;

pub use error::{Error, Result};
pub use lsa::{debias_transform, eval_objective, solve_cd, solve_separable, LsaProblem, LsaSolution, SolveOptions};
pub use montecarlo::{
    parse_config, parse_model_config, render_records_csv, render_summary_csv, render_tables,
    run_mc, GChoice, McConfig, McRun, McSummary, ModelSpec, TuningSpec,
};
pub use newton::{Loss, NewtonOptions, NewtonReport};
pub use penalty::{compute_weights, prox_lq, TuningConfig, WeightVector, DEFAULT_WEIGHT_FLOOR};
pub use po::{po_estimate, PoResult};
