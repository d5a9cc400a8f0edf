use serde::{Deserialize, Serialize};

use super::model::{start_alpha, start_asymptote, start_log_beta, LogSizes, Saturating, SaturatingProblem};
use super::multistart::{best_of, StartSampler};
use super::power::{check_observations, check_sizes, distinct_count};
use super::{FitConfig, FitDiagnostics, FitError};
use crate::lawcore::{BivariateLawParams, MetricDirection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariatePoint {
    pub n_enc: f64,
    pub n_dec: f64,
    pub y: f64,
}

impl BivariatePoint {
    pub fn new(n_enc: f64, n_dec: f64, y: f64) -> Self {
        Self { n_enc, n_dec, y }
    }
}

/// `x = [ln α_e, ln α_d, asymptote, ln β_c]`.
struct BivariateModel {
    te: Vec<f64>,
    td: Vec<f64>,
    y: Vec<f64>,
}

impl Saturating for BivariateModel {
    fn n_params(&self) -> usize {
        4
    }

    fn observed(&self) -> &[f64] {
        &self.y
    }

    fn asymptote_index(&self) -> usize {
        2
    }

    fn reducible(&self, x: &[f64], k: usize, grad: &mut [f64]) -> f64 {
        let ae = x[0].exp();
        let ad = x[1].exp();
        let r = (x[3] - ae * self.te[k] - ad * self.td[k]).exp();
        grad[0] = -r * ae * self.te[k];
        grad[1] = -r * ad * self.td[k];
        grad[3] = r;
        r
    }
}

/// Fits the encoder/decoder law `β n_enc^-α_e n_dec^-α_d + L∞`.
///
/// Data with a constant encoder (or decoder) size cannot identify that
/// exponent and is rejected. Data along a line in log-size space (for
/// example proportional scaling) only identify `α_e + α_d`; the split
/// returned is whichever the damped solver settles on, and predictions along
/// that line remain exact.
pub fn fit_bivariate_law(
    points: &[BivariatePoint],
    config: &FitConfig,
) -> Result<(BivariateLawParams, FitDiagnostics), FitError> {
    config.validate()?;
    if points.len() < 4 {
        return Err(FitError::InsufficientData(format!(
            "bivariate fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    check_sizes(points.iter().flat_map(|p| [p.n_enc, p.n_dec]))?;
    if distinct_count(points.iter().map(|p| p.n_enc).collect()) < 2 {
        return Err(FitError::RankDeficient(
            "all points share the encoder size; alpha_e is unidentifiable".into(),
        ));
    }
    if distinct_count(points.iter().map(|p| p.n_dec).collect()) < 2 {
        return Err(FitError::RankDeficient(
            "all points share the decoder size; alpha_d is unidentifiable".into(),
        ));
    }
    let direction = MetricDirection::LossLike;
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    check_observations(&ys, direction)?;

    let enc = LogSizes::new(points.iter().map(|p| p.n_enc));
    let dec = LogSizes::new(points.iter().map(|p| p.n_dec));
    let model = BivariateModel {
        te: enc.centred.clone(),
        td: dec.centred.clone(),
        y: ys,
    };
    let problem = SaturatingProblem::new(&model, direction, config.residual_space);
    let anchor = (0..points.len())
        .min_by(|&a, &b| (model.te[a] + model.td[a]).total_cmp(&(model.te[b] + model.td[b])))
        .expect("non-empty");

    let sampler = StartSampler::new(3, config.seed);
    let starts: Vec<Vec<f64>> = (0..config.multistart_count)
        .map(|i| {
            let u = sampler.point(i);
            let (ae, ad) = (start_alpha(u[0]), start_alpha(u[1]));
            let a = start_asymptote(direction, u[2], &model.y);
            let at = ae * model.te[anchor] + ad * model.td[anchor];
            vec![ae.ln(), ad.ln(), problem.asymptote.inverse(a), start_log_beta(model.y[anchor], a, at)]
        })
        .collect();

    let (start_index, best) = best_of(&problem, &starts, config)?;
    let x = &best.x;
    let (alpha_e, alpha_d) = (x[0].exp(), x[1].exp());
    let params = BivariateLawParams::new(
        (x[3] + alpha_e * enc.log_ref + alpha_d * dec.log_ref).exp(),
        alpha_e,
        alpha_d,
        problem.asymptote.forward(x[2]),
    )?;
    let diagnostics = FitDiagnostics::from_residuals(
        &model.y,
        problem.raw_residuals(x),
        4,
        best.converged,
        best.cost,
        start_index,
    );
    Ok((params, diagnostics))
}
