use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataio::RunRecord;
use crate::lawcore::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub run_id: String,
    pub at_step: u64,
    pub loss: f64,
    pub quality: f64,
}

/// Least-squares line `quality = slope·loss + intercept` and Pearson `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n_pairs: usize,
    /// `None` when either variable is constant.
    pub pearson_r: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub degenerate: bool,
}

/// Fits the line through `(loss, quality)` pairs. Constant quality gives
/// slope 0 with `r` undefined and the result flagged degenerate; constant
/// loss admits no line and is an error.
pub fn correlate(pairs: &[(f64, f64)]) -> Result<Correlation, AnalysisError> {
    if pairs.len() < 3 {
        return Err(AnalysisError::InsufficientPairs(pairs.len()));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(AnalysisError::InvalidInput("metric pairs must be finite".into()));
    }
    let k = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::Degenerate("loss values are constant; no line can be fitted".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let degenerate = syy == 0.0;
    let pearson_r = (!degenerate).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0));
    let residuals = pairs.iter().map(|&(x, y)| y - (slope * x + intercept)).collect();
    Ok(Correlation { n_pairs: pairs.len(), pearson_r, slope, intercept, residuals, degenerate })
}

/// Pairs the two metrics of `task` on `testset` within each `(run, step)`.
/// Zero-shot evals are skipped.
pub fn metric_pairs(
    records: &[RunRecord],
    task: &TaskId,
    loss_metric: &str,
    quality_metric: &str,
    testset: &str,
) -> Vec<MetricPair> {
    let mut out = Vec::new();
    for r in records {
        let mut by_step: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
        for e in r.evals.iter().filter(|e| &e.task == task && e.testset == testset && !e.zero_shot) {
            let slot = by_step.entry(e.at_step).or_default();
            if e.metric == loss_metric {
                slot.0 = Some(e.value);
            } else if e.metric == quality_metric {
                slot.1 = Some(e.value);
            }
        }
        for (step, slot) in by_step {
            if let (Some(loss), Some(quality)) = slot {
                out.push(MetricPair { run_id: r.run_id.clone(), at_step: step, loss, quality });
            }
        }
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.at_step.cmp(&b.at_step)));
    out
}

pub fn metric_loss_correlation(
    records: &[RunRecord],
    task: &TaskId,
    loss_metric: &str,
    quality_metric: &str,
    testset: &str,
) -> Result<(Vec<MetricPair>, Correlation), AnalysisError> {
    let pairs = metric_pairs(records, task, loss_metric, quality_metric, testset);
    let xy: Vec<(f64, f64)> = pairs.iter().map(|p| (p.loss, p.quality)).collect();
    let c = correlate(&xy)?;
    Ok((pairs, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_line() {
        let pairs: Vec<(f64, f64)> = (0..20).map(|i| {
            let l = 1.5 + 0.1 * i as f64;
            (l, -12.5 * l + 60.0)
        }).collect();
        let c = correlate(&pairs).unwrap();
        assert!((c.pearson_r.unwrap() + 1.0).abs() < 1e-12);
        assert!((c.slope + 12.5).abs() < 1e-10);
        assert!((c.intercept - 60.0).abs() < 1e-9);
    }

    #[test]
    fn constant_quality_is_degenerate() {
        let c = correlate(&[(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.slope, 0.0);
        assert_eq!(c.pearson_r, None);
        assert!(matches!(correlate(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]), Err(AnalysisError::Degenerate(_))));
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(correlate(&[(1.0, 2.0), (2.0, 3.0)]), Err(AnalysisError::InsufficientPairs(2))));
    }

    #[test]
    fn noisy_slope() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<(f64, f64)> = (0..60)
            .map(|i| {
                let l = 1.4 + 1.2 * i as f64 / 59.0;
                let z: f64 = StandardNormal.sample(&mut rng);
                let q = -20.0 * l + 80.0;
                (l, q * (1.0 + 0.01 * z))
            })
            .collect();
        let c = correlate(&pairs).unwrap();
        assert!(((c.slope + 20.0) / 20.0).abs() < 0.05, "{}", c.slope);
    }
}
