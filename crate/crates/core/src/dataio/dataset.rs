use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::records::RunRecord;
use super::DataError;
use crate::fitting::{convergence_correct, CurvePoint, FitConfig, WeightedPoint, DEFAULT_TARGET_STEP};
use crate::lawcore::{MetricDirection, TaskId};

/// One fitting observation drawn from a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub run_id: String,
    pub n: f64,
    pub p: f64,
    pub y: f64,
    /// Step the value refers to: the last eval step, or the correction target.
    pub step: u64,
    pub corrected: bool,
}

impl DataPoint {
    pub fn weighted(&self) -> WeightedPoint {
        WeightedPoint::new(self.n, self.p, self.y)
    }
}

/// Which `(run, task)` pairs get their value replaced by the learning-curve
/// extrapolation at `target_step`. Nothing is corrected unless listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPolicy {
    pub pairs: BTreeSet<(String, TaskId)>,
    pub target_step: u64,
    pub direction: MetricDirection,
    pub config: FitConfig,
}

impl CorrectionPolicy {
    pub fn none() -> Self {
        Self {
            pairs: BTreeSet::new(),
            target_step: DEFAULT_TARGET_STEP,
            direction: MetricDirection::LossLike,
            config: FitConfig::default(),
        }
    }

    pub fn for_pairs(
        pairs: impl IntoIterator<Item = (String, TaskId)>,
        direction: MetricDirection,
    ) -> Self {
        Self {
            pairs: pairs.into_iter().collect(),
            direction,
            ..Self::none()
        }
    }

    pub fn applies(&self, run_id: &str, task: &TaskId) -> bool {
        self.pairs.contains(&(run_id.to_string(), task.clone()))
    }
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        Self::none()
    }
}

/// One point per `(run, task)` from the eval with the latest step, with
/// `n = n_noneb` and `p` the task's own mixture weight. Zero-shot evals are
/// dropped. Output is sorted by `(p, n, run_id)`.
pub fn build_fit_dataset(
    records: &[RunRecord],
    task: &TaskId,
    testset: &str,
    metric: &str,
    policy: &CorrectionPolicy,
) -> Result<Vec<DataPoint>, DataError> {
    let mut matched_any = false;
    let mut points = Vec::new();
    for r in records {
        let mut history: Vec<(u64, f64)> = r
            .evals
            .iter()
            .filter(|e| &e.task == task && e.testset == testset && e.metric == metric)
            .map(|e| (e.at_step, e.value))
            .collect();
        if history.is_empty() {
            continue;
        }
        matched_any = true;
        let p = r.weight_of(task);
        if p == 0.0 {
            continue;
        }
        history.sort_by_key(|h| h.0);
        let (last_step, last_value) = *history.last().expect("non-empty");
        let mut point = DataPoint {
            run_id: r.run_id.clone(),
            n: r.model.n_noneb as f64,
            p,
            y: last_value,
            step: last_step,
            corrected: false,
        };
        if policy.applies(&r.run_id, task) {
            let curve: Vec<CurvePoint> = history.iter().map(|&(s, y)| CurvePoint::new(s, y)).collect();
            let corrected = convergence_correct(&curve, policy.target_step, policy.direction, &policy.config)
                .map_err(|source| DataError::Correction {
                    run_id: r.run_id.clone(),
                    task: task.clone(),
                    source,
                })?;
            point.y = corrected.value;
            point.step = policy.target_step;
            point.corrected = true;
        }
        points.push(point);
    }
    if !matched_any {
        return Err(DataError::MissingMetric {
            task: task.clone(),
            testset: testset.to_string(),
            metric: metric.to_string(),
        });
    }
    if points.is_empty() {
        return Err(DataError::EmptyDataset(format!(
            "task `{task}` has no evals with positive weight for {testset}/{metric}"
        )));
    }
    points.sort_by(|a, b| {
        a.p.total_cmp(&b.p)
            .then(a.n.total_cmp(&b.n))
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
    Ok(points)
}
