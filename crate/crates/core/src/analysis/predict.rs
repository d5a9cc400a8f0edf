use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataio::{LawBundle, TaskLaws};
use crate::lawcore::{
    predict_any_weighting, FractionFit, FractionForm, LawError, MetricDirection, ModelSize, TaskId, WeightVector,
};

pub const FRONTIER_GRID_POINTS: usize = 37;

/// `FRONTIER_GRID_POINTS` evenly spaced weights from 0.05 to 0.95.
pub fn default_frontier_grid() -> Vec<f64> {
    (0..FRONTIER_GRID_POINTS).map(|i| (2 + i) as f64 / 40.0).collect()
}

/// Which fitted fraction curve drives predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormSelection {
    /// Flexible when fitted, otherwise linear.
    #[default]
    Auto,
    Flexible,
    Linear,
}

impl fmt::Display for FormSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormSelection::Auto => "auto",
            FormSelection::Flexible => "flexible",
            FormSelection::Linear => "linear",
        })
    }
}

impl FromStr for FormSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(FormSelection::Auto),
            "flexible" => Ok(FormSelection::Flexible),
            "linear" => Ok(FormSelection::Linear),
            other => Err(format!("unknown fraction form `{other}` (auto, flexible, linear)")),
        }
    }
}

pub fn select_fraction<'a>(
    task: &TaskId,
    laws: &'a TaskLaws,
    selection: FormSelection,
) -> Result<&'a FractionFit, AnalysisError> {
    let found = match selection {
        FormSelection::Auto => laws.preferred_fraction(),
        FormSelection::Flexible => laws.fraction(FractionForm::Flexible),
        FormSelection::Linear => laws.fraction(FractionForm::Linear),
    };
    found.ok_or_else(|| AnalysisError::MissingFraction { task: task.clone(), selection })
}

/// Prediction for one task at one `(p, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub value: f64,
    pub f: f64,
    pub n_eff: f64,
}

/// The single-task law at `f̂(p)·n`.
pub fn predict_point(
    bundle: &LawBundle,
    task: &TaskId,
    p: f64,
    n: ModelSize,
    selection: FormSelection,
) -> Result<PointPrediction, AnalysisError> {
    let laws = bundle.task(task)?;
    let fit = select_fraction(task, laws, selection)?;
    let value = predict_any_weighting(&laws.single_task, bundle.direction, fit, p, n)?;
    let f = fit.eval(p)?;
    Ok(PointPrediction { value, f, n_eff: f * n.get() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    /// Weight of the first task; the second gets `1 − p`.
    pub p: f64,
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCurve {
    pub n: f64,
    pub first: TaskId,
    pub second: TaskId,
    pub metric: String,
    pub direction: MetricDirection,
    pub forms: [FractionForm; 2],
    pub grid: Vec<FrontierPoint>,
}

/// The two tasks of a two-task bundle.
pub fn bundle_pair(bundle: &LawBundle) -> Result<(TaskId, TaskId), AnalysisError> {
    let tasks: Vec<&TaskId> = bundle.tasks.keys().collect();
    match tasks.as_slice() {
        [a, b] => Ok(((*a).clone(), (*b).clone())),
        _ => Err(AnalysisError::InvalidInput(format!(
            "bundle holds {} tasks; name the two frontier tasks explicitly",
            tasks.len()
        ))),
    }
}

pub fn predict_frontier(
    bundle: &LawBundle,
    pair: (&TaskId, &TaskId),
    n: ModelSize,
    grid: &[f64],
    selection: FormSelection,
) -> Result<FrontierCurve, AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::InvalidInput("frontier grid is empty".into()));
    }
    if let Some(&p) = grid.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(LawError::Domain(p).into());
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::InvalidInput("frontier grid must be strictly increasing".into()));
    }
    let (first, second) = pair;
    if first == second {
        return Err(AnalysisError::InvalidInput("frontier needs two distinct tasks".into()));
    }
    let (l1, l2) = (bundle.task(first)?, bundle.task(second)?);
    let (f1, f2) = (select_fraction(first, l1, selection)?, select_fraction(second, l2, selection)?);
    let points = grid
        .iter()
        .map(|&p| {
            Ok(FrontierPoint {
                p,
                first: predict_any_weighting(&l1.single_task, bundle.direction, f1, p, n)?,
                second: predict_any_weighting(&l2.single_task, bundle.direction, f2, 1.0 - p, n)?,
            })
        })
        .collect::<Result<Vec<_>, LawError>>()?;
    Ok(FrontierCurve {
        n: n.get(),
        first: first.clone(),
        second: second.clone(),
        metric: bundle.metric.clone(),
        direction: bundle.direction,
        forms: [f1.form(), f2.form()],
        grid: points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub task: TaskId,
    pub p: f64,
    pub f: f64,
    pub n_eff: f64,
    /// `f / p`: effective parameters relative to a naive proportional split.
    pub relative_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub reference_n: f64,
    pub rows: Vec<CapacityRow>,
}

/// Effective fraction, effective parameters and gain at every observed
/// weighting of every task.
pub fn capacity_report(bundle: &LawBundle, reference_n: ModelSize) -> CapacityReport {
    let rows = bundle
        .tasks
        .iter()
        .flat_map(|(task, laws)| {
            laws.effective_fractions.iter().map(move |(key, &f)| {
                let p = key.value();
                CapacityRow {
                    task: task.clone(),
                    p,
                    f,
                    n_eff: f * reference_n.get(),
                    relative_gain: f / p,
                }
            })
        })
        .collect();
    CapacityReport { reference_n: reference_n.get(), rows }
}

pub const MULTITASK_ASSUMPTION: &str =
    "each task's effective fraction depends only on its own weight; other tasks' weights are ignored";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub p: f64,
    pub f: f64,
    pub n_eff: f64,
    pub value: f64,
    pub direction: MetricDirection,
    pub form: FractionForm,
    /// Index of the bundle the task's laws came from.
    pub bundle_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitaskPrediction {
    pub n: f64,
    pub assumption: String,
    pub predictions: BTreeMap<TaskId, TaskPrediction>,
}

/// Predicts every task of a K-task mixture from pairwise bundles, using each
/// task's own weight and the first bundle that carries a fraction fit for it.
pub fn predict_multitask(
    bundles: &[LawBundle],
    mixture: &WeightVector,
    n: ModelSize,
    selection: FormSelection,
) -> Result<MultitaskPrediction, AnalysisError> {
    mixture.validate()?;
    let mut predictions = BTreeMap::new();
    for (task, p) in mixture.iter() {
        if p == 0.0 {
            continue;
        }
        let (index, bundle, laws) = bundles
            .iter()
            .enumerate()
            .find_map(|(i, b)| {
                b.tasks
                    .get(task)
                    .filter(|l| select_fraction(task, l, selection).is_ok())
                    .map(|l| (i, b, l))
            })
            .ok_or_else(|| AnalysisError::MissingTask(task.clone()))?;
        let fit = select_fraction(task, laws, selection)?;
        let value = predict_any_weighting(&laws.single_task, bundle.direction, fit, p, n)?;
        let f = fit.eval(p)?;
        predictions.insert(
            task.clone(),
            TaskPrediction {
                p,
                f,
                n_eff: f * n.get(),
                value,
                direction: bundle.direction,
                form: fit.form(),
                bundle_index: index,
            },
        );
    }
    Ok(MultitaskPrediction { n: n.get(), assumption: MULTITASK_ASSUMPTION.to_string(), predictions })
}
