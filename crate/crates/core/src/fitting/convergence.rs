//! Learning-curve extrapolation for under-trained runs.

use serde::{Deserialize, Serialize};

use super::{fit_power_law, FitConfig, FitDiagnostics, FitError, SizePoint};
use crate::lawcore::{eval_law, MetricDirection, ModelSize, PowerLawParams};

/// Step count at which corrected values are reported unless told otherwise.
pub const DEFAULT_TARGET_STEP: u64 = 2_500_000;

/// Extrapolating beyond this multiple of the last observed step raises the
/// warning flag.
const EXTRAPOLATION_WARNING_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub y: f64,
}

impl CurvePoint {
    pub fn new(step: u64, y: f64) -> Self {
        Self { step, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedValue {
    pub value: f64,
    pub target_step: u64,
    /// `y(s) = b s^-a + c` as `(beta = b, alpha = a, l_inf = c)`.
    pub curve: PowerLawParams,
    pub diagnostics: FitDiagnostics,
    pub extrapolation_warning: bool,
}

/// Fits `y(s) = b·s^-a + c` to a training curve and evaluates it at
/// `target_step`.
pub fn convergence_correct(
    curve: &[CurvePoint],
    target_step: u64,
    direction: MetricDirection,
    config: &FitConfig,
) -> Result<CorrectedValue, FitError> {
    if curve.len() < 4 {
        return Err(FitError::InsufficientData(format!(
            "convergence correction needs at least 4 curve points, got {}",
            curve.len()
        )));
    }
    if curve.iter().any(|c| c.step == 0) {
        return Err(FitError::InvalidInput("training steps must be positive".into()));
    }
    let first = curve.iter().map(|c| c.step).min().expect("non-empty");
    let last = curve.iter().map(|c| c.step).max().expect("non-empty");
    if (last as f64) < 10.0 * first as f64 {
        return Err(FitError::InsufficientData(format!(
            "curve spans steps {first}..{last}; at least one decade is required"
        )));
    }
    if target_step < last {
        return Err(FitError::InvalidInput(format!(
            "target step {target_step} precedes the last observed step {last}"
        )));
    }
    let points: Vec<SizePoint> = curve.iter().map(|c| SizePoint::new(c.step as f64, c.y)).collect();
    let (params, diagnostics) = fit_power_law(&points, direction, config)?;
    let value = eval_law(&params, direction, ModelSize::new(target_step as f64)?);
    Ok(CorrectedValue {
        value,
        target_step,
        curve: params,
        diagnostics,
        extrapolation_warning: target_step as f64 > EXTRAPOLATION_WARNING_RATIO * last as f64,
    })
}
