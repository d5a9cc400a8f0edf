//! Residual problems for the saturating power-law family.
//!
//! Every law here has the shape `A + s·R(x)` where `A` is the asymptote,
//! `s = ±1` is the metric direction and `R > 0` is the reducible term. The
//! residual space is applied generically on top of `(A, R)`.

use nalgebra::DMatrix;

use super::solver::LeastSquares;
use super::ResidualSpace;
use crate::lawcore::MetricDirection;

/// Map from the unconstrained optimizer coordinate to the asymptote.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum AsymptoteMap {
    /// Non-negative irreducible loss.
    Softplus,
    /// Unconstrained asymptotic quality.
    Identity,
}

impl AsymptoteMap {
    pub fn for_direction(direction: MetricDirection) -> Self {
        match direction {
            MetricDirection::LossLike => AsymptoteMap::Softplus,
            MetricDirection::QualityLike => AsymptoteMap::Identity,
        }
    }

    pub fn forward(self, u: f64) -> f64 {
        match self {
            AsymptoteMap::Softplus if u > 35.0 => u,
            AsymptoteMap::Softplus => u.exp().ln_1p(),
            AsymptoteMap::Identity => u,
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            AsymptoteMap::Softplus => 1.0 / (1.0 + (-u).exp()),
            AsymptoteMap::Identity => 1.0,
        }
    }

    pub fn inverse(self, a: f64) -> f64 {
        match self {
            AsymptoteMap::Softplus if a > 35.0 => a,
            AsymptoteMap::Softplus => a.max(1e-300).exp_m1().ln(),
            AsymptoteMap::Identity => a,
        }
    }
}

/// A law `A + s·R` over `observed().len()` points.
pub(crate) trait Saturating: Sync {
    fn n_params(&self) -> usize;
    fn observed(&self) -> &[f64];
    /// Index of the asymptote coordinate in `x`.
    fn asymptote_index(&self) -> usize;
    /// Reducible term at point `k` and its gradient (entries for the
    /// asymptote coordinate are ignored).
    fn reducible(&self, x: &[f64], k: usize, grad: &mut [f64]) -> f64;
}

pub(crate) struct SaturatingProblem<'a, M> {
    pub model: &'a M,
    pub direction: MetricDirection,
    pub space: ResidualSpace,
    pub asymptote: AsymptoteMap,
}

impl<'a, M: Saturating> SaturatingProblem<'a, M> {
    pub fn new(model: &'a M, direction: MetricDirection, space: ResidualSpace) -> Self {
        Self {
            model,
            direction,
            space,
            asymptote: AsymptoteMap::for_direction(direction),
        }
    }

    /// Raw-space residuals `model − y` at `x`.
    pub fn raw_residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.model.n_params()];
        let a = self.asymptote.forward(x[self.model.asymptote_index()]);
        let s = self.direction.sign();
        self.model
            .observed()
            .iter()
            .enumerate()
            .map(|(k, y)| a + s * self.model.reducible(x, k, &mut grad) - y)
            .collect()
    }
}

impl<M: Saturating> LeastSquares for SaturatingProblem<'_, M> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn n_residuals(&self) -> usize {
        self.model.observed().len()
    }

    fn evaluate(&self, x: &[f64], residuals: &mut [f64], mut jacobian: Option<&mut DMatrix<f64>>) -> bool {
        let ai = self.model.asymptote_index();
        let a = self.asymptote.forward(x[ai]);
        let da = self.asymptote.derivative(x[ai]);
        let s = self.direction.sign();
        let mut grad = vec![0.0; self.model.n_params()];
        for (k, &y) in self.model.observed().iter().enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let red = self.model.reducible(x, k, &mut grad);
            if !red.is_finite() {
                return false;
            }
            match self.space {
                ResidualSpace::Raw => {
                    residuals[k] = a + s * red - y;
                    if let Some(j) = jacobian.as_deref_mut() {
                        for (i, g) in grad.iter().enumerate() {
                            j[(k, i)] = s * g;
                        }
                        j[(k, ai)] = da;
                    }
                }
                ResidualSpace::LogShifted => {
                    let gap = s * (y - a);
                    if !(gap > 0.0 && red > 0.0) {
                        return false;
                    }
                    residuals[k] = gap.ln() - red.ln();
                    if let Some(j) = jacobian.as_deref_mut() {
                        for (i, g) in grad.iter().enumerate() {
                            j[(k, i)] = -g / red;
                        }
                        j[(k, ai)] = -da / (y - a);
                    }
                }
            }
        }
        true
    }
}

/// Log model sizes centred on their geometric mean.
#[derive(Debug, Clone)]
pub(crate) struct LogSizes {
    pub centred: Vec<f64>,
    pub log_ref: f64,
}

impl LogSizes {
    pub fn new(sizes: impl IntoIterator<Item = f64>) -> Self {
        let logs: Vec<f64> = sizes.into_iter().map(f64::ln).collect();
        let log_ref = logs.iter().sum::<f64>() / logs.len().max(1) as f64;
        Self {
            centred: logs.iter().map(|l| l - log_ref).collect(),
            log_ref,
        }
    }
}

/// Starting asymptote for a unit coordinate `u ∈ [0, 1)`: inside
/// `[0, min y)` for losses, above `max y` for quality metrics.
pub(crate) fn start_asymptote(direction: MetricDirection, u: f64, observed: &[f64]) -> f64 {
    let min = observed.iter().copied().fold(f64::INFINITY, f64::min);
    let max = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match direction {
        MetricDirection::LossLike => (u * 0.99 * min).max(min * 1e-9),
        MetricDirection::QualityLike => {
            let span = (max - min).max(1e-3 * max.abs().max(1.0));
            max + (0.01 + 2.0 * u) * span
        }
    }
}

/// Log of the centred multiplicative factor that puts the law through the
/// observation `y` at centred log size `t`.
pub(crate) fn start_log_beta(y: f64, asymptote: f64, alpha_t: f64) -> f64 {
    let gap = (y - asymptote).abs().max(1e-12 * y.abs().max(1.0));
    gap.ln() + alpha_t
}

/// Uniform starting exponent range.
pub(crate) const ALPHA_START_RANGE: (f64, f64) = (0.05, 1.5);

pub(crate) fn start_alpha(u: f64) -> f64 {
    ALPHA_START_RANGE.0 + u * (ALPHA_START_RANGE.1 - ALPHA_START_RANGE.0)
}
