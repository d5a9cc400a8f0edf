use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{
    start_alpha, start_asymptote, start_log_beta, LogSizes, Saturating, SaturatingProblem,
};
use super::multistart::{best_of, StartSampler};
use super::power::{check_observations, check_sizes, distinct_count};
use super::{r_squared, FitConfig, FitDiagnostics, FitError};
use crate::lawcore::{JointLaw, MetricDirection, TaskId, WeightKey};

/// One observation of a task: model size, the task's own weight, metric value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub n: f64,
    pub p: f64,
    pub y: f64,
}

impl WeightedPoint {
    pub fn new(n: f64, p: f64, y: f64) -> Self {
        Self { n, p, y }
    }
}

/// `x = [ln α, asymptote, ln β_c(group 0), …, ln β_c(group G-1)]`.
struct JointModel {
    t: Vec<f64>,
    group: Vec<usize>,
    y: Vec<f64>,
    groups: usize,
}

impl Saturating for JointModel {
    fn n_params(&self) -> usize {
        self.groups + 2
    }

    fn observed(&self) -> &[f64] {
        &self.y
    }

    fn asymptote_index(&self) -> usize {
        1
    }

    fn reducible(&self, x: &[f64], k: usize, grad: &mut [f64]) -> f64 {
        let alpha = x[0].exp();
        let bi = 2 + self.group[k];
        let r = (x[bi] - alpha * self.t[k]).exp();
        grad[0] = -r * alpha * self.t[k];
        grad[bi] = r;
        r
    }
}

/// Fits the joint law for one task: one exponent and one asymptote shared by
/// all weightings, one multiplicative factor per weighting. Solved as a
/// single simultaneous optimization with `#weightings + 2` parameters.
pub fn fit_joint_law(
    task: &TaskId,
    points: &[WeightedPoint],
    direction: MetricDirection,
    config: &FitConfig,
) -> Result<(JointLaw, FitDiagnostics), FitError> {
    config.validate()?;
    check_sizes(points.iter().map(|p| p.n))?;
    let keys: Vec<WeightKey> = points
        .iter()
        .map(|pt| WeightKey::from_weight(pt.p))
        .collect::<Result<_, _>>()?;
    let mut by_key: BTreeMap<WeightKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_key.entry(*k).or_default().push(i);
    }
    if by_key.len() < 2 {
        return Err(FitError::InsufficientData(format!(
            "joint fit needs at least 2 distinct weightings, got {}",
            by_key.len()
        )));
    }
    for (key, idx) in &by_key {
        if distinct_count(idx.iter().map(|&i| points[i].n).collect()) < 2 {
            return Err(FitError::DegenerateWeighting(*key));
        }
    }
    let n_params = by_key.len() + 2;
    if points.len() < n_params {
        return Err(FitError::InsufficientData(format!(
            "{} points cannot determine {n_params} parameters",
            points.len()
        )));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    check_observations(&ys, direction)?;

    let group_keys: Vec<WeightKey> = by_key.keys().copied().collect();
    let group_of: BTreeMap<WeightKey, usize> =
        group_keys.iter().enumerate().map(|(g, k)| (*k, g)).collect();
    let sizes = LogSizes::new(points.iter().map(|p| p.n));
    let model = JointModel {
        t: sizes.centred.clone(),
        group: keys.iter().map(|k| group_of[k]).collect(),
        y: ys,
        groups: group_keys.len(),
    };
    let problem = SaturatingProblem::new(&model, direction, config.residual_space);

    // Smallest-size point of each weighting anchors that weighting's β.
    let anchors: Vec<usize> = by_key
        .values()
        .map(|idx| {
            *idx.iter()
                .min_by(|&&a, &&b| points[a].n.total_cmp(&points[b].n))
                .expect("non-empty group")
        })
        .collect();

    let sampler = StartSampler::new(2, config.seed);
    let starts: Vec<Vec<f64>> = (0..config.multistart_count)
        .map(|i| {
            let u = sampler.point(i);
            let alpha = start_alpha(u[0]);
            let a = start_asymptote(direction, u[1], &model.y);
            let mut x = vec![alpha.ln(), problem.asymptote.inverse(a)];
            x.extend(
                anchors
                    .iter()
                    .map(|&k| start_log_beta(model.y[k], a, alpha * model.t[k])),
            );
            x
        })
        .collect();

    let (start_index, best) = best_of(&problem, &starts, config)?;
    let x = &best.x;
    let alpha = x[0].exp();
    let betas: BTreeMap<WeightKey, f64> = group_keys
        .iter()
        .enumerate()
        .map(|(g, k)| (*k, (x[2 + g] + alpha * sizes.log_ref).exp()))
        .collect();
    let law = JointLaw::new(
        task.clone(),
        alpha,
        problem.asymptote.forward(x[1]),
        betas,
        direction,
    )?;

    let residuals = problem.raw_residuals(x);
    let mut diagnostics = FitDiagnostics::from_residuals(
        &model.y,
        residuals.clone(),
        n_params,
        best.converged,
        best.cost,
        start_index,
    );
    diagnostics.group_r_squared = by_key
        .iter()
        .map(|(key, idx)| {
            let ys: Vec<f64> = idx.iter().map(|&i| model.y[i]).collect();
            let sse = idx.iter().map(|&i| residuals[i].powi(2)).sum();
            (*key, r_squared(&ys, sse))
        })
        .collect();
    Ok((law, diagnostics))
}
