//! End-to-end pipelines: joint analysis into a bundle, frontier and
//! capacity predictions, metric correlation, multi-task extrapolation and
//! report outputs.

mod correlation;
mod pipeline;
mod predict;
mod report;

use thiserror::Error;

use crate::dataio::DataError;
use crate::fitting::FitError;
use crate::lawcore::{LawError, TaskId};

pub use correlation::{correlate, metric_loss_correlation, metric_pairs, Correlation, MetricPair};
pub use pipeline::{analyze, AnalysisConfig, MIN_FLEXIBLE_WEIGHTINGS};
pub use predict::{
    bundle_pair, capacity_report, default_frontier_grid, predict_frontier, predict_multitask,
    predict_point, select_fraction, CapacityReport, CapacityRow, FormSelection, FrontierCurve,
    FrontierPoint, MultitaskPrediction, PointPrediction, TaskPrediction, FRONTIER_GRID_POINTS,
    MULTITASK_ASSUMPTION,
};
pub use report::{
    capacity_csv, correlation_plot, fmt_human, fmt_machine, fraction_plot, frontier_csv,
    frontier_plot, laws_csv, scaling_plot, PlotPoint,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("task `{task}`: {source}")]
    Task {
        task: TaskId,
        source: Box<AnalysisError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("task `{task}` has no {selection} fraction fit")]
    MissingFraction {
        task: TaskId,
        selection: FormSelection,
    },
    #[error("no bundle provides laws for task `{0}`")]
    MissingTask(TaskId),
    #[error("need at least 3 paired observations, got {0}")]
    InsufficientPairs(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl AnalysisError {
    /// The innermost error, past any task annotations.
    pub fn root(&self) -> &AnalysisError {
        match self {
            AnalysisError::Task { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the failure happened while fitting rather than while
    /// reading or validating data.
    pub fn is_fit_failure(&self) -> bool {
        matches!(self.root(), AnalysisError::Fit(_) | AnalysisError::Law(_) | AnalysisError::Degenerate(_))
            || matches!(self.root(), AnalysisError::Data(DataError::Correction { .. }))
    }
}
