use serde::{Deserialize, Serialize};

use super::model::{
    start_alpha, start_asymptote, start_log_beta, LogSizes, Saturating, SaturatingProblem,
};
use super::multistart::{best_of, StartSampler};
use super::{check_finite, FitConfig, FitDiagnostics, FitError};
use crate::lawcore::{MetricDirection, PowerLawParams};

/// One observation `(n, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub n: f64,
    pub y: f64,
}

impl SizePoint {
    pub fn new(n: f64, y: f64) -> Self {
        Self { n, y }
    }
}

/// `x = [ln α, asymptote, ln β_c]` with sizes centred on their geometric mean.
struct PowerModel {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl Saturating for PowerModel {
    fn n_params(&self) -> usize {
        3
    }

    fn observed(&self) -> &[f64] {
        &self.y
    }

    fn asymptote_index(&self) -> usize {
        1
    }

    fn reducible(&self, x: &[f64], k: usize, grad: &mut [f64]) -> f64 {
        let alpha = x[0].exp();
        let r = (x[2] - alpha * self.t[k]).exp();
        grad[0] = -r * alpha * self.t[k];
        grad[2] = r;
        r
    }
}

pub(crate) fn distinct_count(mut values: Vec<f64>) -> usize {
    values.sort_by(f64::total_cmp);
    values.dedup();
    values.len()
}

pub(crate) fn check_observations(ys: &[f64], direction: MetricDirection) -> Result<(), FitError> {
    check_finite(ys.iter().copied(), "observation")?;
    if direction == MetricDirection::LossLike && ys.iter().any(|&y| y <= 0.0) {
        return Err(FitError::InvalidInput(
            "loss-like observations must be positive".into(),
        ));
    }
    Ok(())
}

pub(crate) fn check_sizes(ns: impl IntoIterator<Item = f64>) -> Result<(), FitError> {
    for n in ns {
        if !(n.is_finite() && n > 0.0) {
            return Err(FitError::InvalidInput(format!("model size {n} must be positive")));
        }
    }
    Ok(())
}

/// Fits `β n^-α + L∞` (or `M∞ − β n^-α`) to a set of observations.
///
/// Non-convergence of the winning start is reported in the diagnostics, not
/// as an error.
pub fn fit_power_law(
    points: &[SizePoint],
    direction: MetricDirection,
    config: &FitConfig,
) -> Result<(PowerLawParams, FitDiagnostics), FitError> {
    config.validate()?;
    let distinct = distinct_count(points.iter().map(|p| p.n).collect());
    if distinct < 3 {
        return Err(FitError::InsufficientData(format!(
            "power-law fit needs at least 3 distinct sizes, got {distinct}"
        )));
    }
    check_sizes(points.iter().map(|p| p.n))?;
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    check_observations(&ys, direction)?;

    let sizes = LogSizes::new(points.iter().map(|p| p.n));
    let model = PowerModel {
        t: sizes.centred.clone(),
        y: ys,
    };
    let problem = SaturatingProblem::new(&model, direction, config.residual_space);

    let smallest = (0..points.len())
        .min_by(|&a, &b| points[a].n.total_cmp(&points[b].n))
        .expect("non-empty");
    let sampler = StartSampler::new(2, config.seed);
    let starts: Vec<Vec<f64>> = (0..config.multistart_count)
        .map(|i| {
            let u = sampler.point(i);
            let alpha = start_alpha(u[0]);
            let a = start_asymptote(direction, u[1], &model.y);
            let log_beta = start_log_beta(model.y[smallest], a, alpha * model.t[smallest]);
            vec![alpha.ln(), problem.asymptote.inverse(a), log_beta]
        })
        .collect();

    let (start_index, best) = best_of(&problem, &starts, config)?;
    let x = &best.x;
    let alpha = x[0].exp();
    let params = PowerLawParams {
        beta: (x[2] + alpha * sizes.log_ref).exp(),
        alpha,
        l_inf: problem.asymptote.forward(x[1]),
    };
    params.validate(direction)?;
    let diagnostics = FitDiagnostics::from_residuals(
        &model.y,
        problem.raw_residuals(x),
        3,
        best.converged,
        best.cost,
        start_index,
    );
    Ok((params, diagnostics))
}
