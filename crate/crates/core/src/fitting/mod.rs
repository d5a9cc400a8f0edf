//! Nonlinear least-squares fitting of every law family.
//!
//! All fits run a damped Gauss-Newton (Levenberg-Marquardt) local solver from
//! a seeded low-discrepancy set of starting points and keep the start with
//! the lowest objective, ties going to the lowest start index. Positivity
//! constraints are handled by reparameterization: exponents and
//! multiplicative factors are optimized in log space and the irreducible loss
//! through a softplus map. Model sizes are normalized by their geometric mean
//! internally, which is a pure reparameterization of β.

mod bivariate;
mod bootstrap;
mod convergence;
mod fraction;
mod joint;
mod model;
mod multistart;
mod power;
mod solver;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lawcore::{LawError, WeightKey};

pub use bivariate::{fit_bivariate_law, BivariatePoint};
pub use bootstrap::{
    bootstrap_uncertainty, BivariateRefit, FractionRefit, JointLawRefit, PowerLawRefit, Refit,
    UncertaintyReport,
};
pub use convergence::{convergence_correct, CorrectedValue, CurvePoint, DEFAULT_TARGET_STEP};
pub use fraction::{fit_fraction_curve, FractionSample};
pub use joint::{fit_joint_law, WeightedPoint};
pub use power::{fit_power_law, SizePoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate weighting {0}: at least two model sizes are required per weighting")]
    DegenerateWeighting(WeightKey),
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("optimum lies on the parameter boundary: {0}")]
    Boundary(String),
    #[error("no start produced a finite objective")]
    NoFiniteStart,
    #[error("{failed} of {total} bootstrap replicates failed (at most 20% allowed)")]
    TooManyFailedReplicates { failed: usize, total: usize },
    #[error(transparent)]
    Law(#[from] LawError),
}

/// Space in which residuals are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSpace {
    /// `model(n) − y`
    #[default]
    Raw,
    /// `log|y − L∞| − log(β n^-α)`, using the current L∞ estimate.
    LogShifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub residual_space: ResidualSpace,
    pub multistart_count: usize,
    pub max_iterations: usize,
    /// Relative decrease of the objective below which a step counts as converged.
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            residual_space: ResidualSpace::Raw,
            multistart_count: 16,
            max_iterations: 2000,
            convergence_tol: 1e-10,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.multistart_count == 0 || self.max_iterations == 0 {
            return Err(FitError::InvalidInput(
                "multistart_count and max_iterations must be positive".into(),
            ));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(FitError::InvalidInput("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Goodness-of-fit summary. SSE, R² and residuals are always reported in raw
/// metric units, whatever the residual space of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub sse: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub n_params: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    /// Final objective in the configured residual space.
    pub objective: f64,
    /// Index of the winning multi-start.
    pub start_index: usize,
    /// R² per weighting, for joint fits.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub group_r_squared: BTreeMap<WeightKey, f64>,
}

impl FitDiagnostics {
    pub(crate) fn from_residuals(
        observed: &[f64],
        residuals: Vec<f64>,
        n_params: usize,
        converged: bool,
        objective: f64,
        start_index: usize,
    ) -> Self {
        let sse = residuals.iter().map(|r| r * r).sum();
        Self {
            sse,
            r_squared: r_squared(observed, sse),
            n_points: observed.len(),
            n_params,
            converged: converged && observed.len() >= n_params,
            residuals,
            objective,
            start_index,
            group_r_squared: BTreeMap::new(),
        }
    }
}

pub(crate) fn r_squared(observed: &[f64], sse: f64) -> f64 {
    if observed.is_empty() {
        return 0.0;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let sst: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<(), FitError> {
    for v in values {
        if !v.is_finite() {
            return Err(FitError::InvalidInput(format!("non-finite {what}: {v}")));
        }
    }
    Ok(())
}
