//! Value types and closed-form algebra for the scaling-law families.
//!
//! Everything here is a pure function of immutable values. Fitting lives in
//! [`crate::fitting`]; persistence lives in [`crate::dataio`].

mod eval;
mod types;

pub use eval::{
    effective_fraction, effective_params, eval_bivariate_law, eval_joint_loss, eval_law,
    eval_power_law, eval_quality_law, neff_consistency_check, predict_any_weighting,
    predict_loss_any_weighting,
};
pub use types::{
    BivariateLawParams, FractionCurve, FractionFit, FractionForm, JointLaw, MetricDirection,
    ModelSize, PowerLawParams, TaskId, WeightKey, WeightVector, WEIGHT_SUM_TOLERANCE,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LawError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("weighting {0} has no fitted beta in the joint law")]
    UnknownWeighting(WeightKey),
    #[error("joint law for task `{0}` has no p = 1 baseline beta; effective fraction is undefined")]
    MissingBaseline(TaskId),
    #[error("weight {0} is outside [0, 1]")]
    Domain(f64),
    #[error("zero-shot unsupported: task weight p = 0 is excluded from every law")]
    ZeroShot,
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),
}

/// Checks `p` is a usable task weight: finite, in `(0, 1]`.
pub(crate) fn check_task_weight(p: f64) -> Result<(), LawError> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(LawError::Domain(p));
    }
    if p == 0.0 {
        return Err(LawError::ZeroShot);
    }
    Ok(())
}
