use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::multistart::{best_of, StartSampler};
use super::solver::LeastSquares;
use super::{check_finite, FitConfig, FitDiagnostics, FitError};
use crate::lawcore::{FractionCurve, FractionFit, FractionForm, TaskId};

/// An effective-fraction observation `f` at weight `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionSample {
    pub p: f64,
    pub f: f64,
}

impl FractionSample {
    pub fn new(p: f64, f: f64) -> Self {
        Self { p, f }
    }
}

const EXPONENT_START_RANGE: (f64, f64) = (0.1, 3.0);

/// Exponents below e^-20 mean the bump has flattened into a constant.
const MIN_LN_EXPONENT: f64 = -20.0;

/// `x = [c1, ln c2, ln c3]` for `p + c1 p^c2 (1-p)^c3`.
struct FlexibleProblem<'a> {
    samples: &'a [FractionSample],
}

impl FlexibleProblem<'_> {
    /// `p^c2 (1-p)^c3` and its log-coordinate derivatives.
    fn bump(p: f64, c2: f64, c3: f64) -> (f64, f64, f64) {
        if p >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let g = p.powf(c2) * (1.0 - p).powf(c3);
        (g, g * p.ln() * c2, g * (1.0 - p).ln() * c3)
    }
}

impl LeastSquares for FlexibleProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        self.samples.len()
    }

    fn evaluate(&self, x: &[f64], r: &mut [f64], mut jac: Option<&mut DMatrix<f64>>) -> bool {
        let (c1, c2, c3) = (x[0], x[1].exp(), x[2].exp());
        for (k, s) in self.samples.iter().enumerate() {
            let (g, dg2, dg3) = Self::bump(s.p, c2, c3);
            r[k] = s.p + c1 * g - s.f;
            if let Some(j) = jac.as_deref_mut() {
                j[(k, 0)] = g;
                j[(k, 1)] = c1 * dg2;
                j[(k, 2)] = c1 * dg3;
            }
        }
        r.iter().all(|v| v.is_finite())
    }
}

fn check_samples(samples: &[FractionSample], min: usize, form: FractionForm) -> Result<(), FitError> {
    if samples.len() < min {
        return Err(FitError::InsufficientData(format!(
            "{form} fraction fit needs at least {min} samples, got {}",
            samples.len()
        )));
    }
    check_finite(samples.iter().flat_map(|s| [s.p, s.f]), "fraction sample")?;
    for s in samples {
        if !(s.p > 0.0 && s.p <= 1.0) {
            return Err(FitError::InvalidInput(format!("weight {} outside (0, 1]", s.p)));
        }
        if s.f <= 0.0 {
            return Err(FitError::InvalidInput(format!("effective fraction {} must be positive", s.f)));
        }
    }
    Ok(())
}

fn diagnostics(samples: &[FractionSample], curve: &FractionCurve, n_params: usize, start: usize) -> FitDiagnostics {
    let observed: Vec<f64> = samples.iter().map(|s| s.f).collect();
    let residuals: Vec<f64> = samples
        .iter()
        .map(|s| curve.eval(s.p).expect("validated weight") - s.f)
        .collect();
    let objective = residuals.iter().map(|r| r * r).sum();
    FitDiagnostics::from_residuals(&observed, residuals, n_params, true, objective, start)
}

/// Least-squares fit of an effective-fraction curve to `(p, f)` samples.
pub fn fit_fraction_curve(
    task: &TaskId,
    samples: &[FractionSample],
    form: FractionForm,
    config: &FitConfig,
) -> Result<(FractionFit, FitDiagnostics), FitError> {
    config.validate()?;
    match form {
        FractionForm::Linear => {
            check_samples(samples, 2, form)?;
            // f − 1 = c1 (p − 1): closed-form slope through (1, 1).
            let (num, den) = samples.iter().fold((0.0, 0.0), |(num, den), s| {
                let d = s.p - 1.0;
                (num + d * (s.f - 1.0), den + d * d)
            });
            if den == 0.0 {
                return Err(FitError::InsufficientData(
                    "linear fraction fit needs at least one sample with p < 1".into(),
                ));
            }
            let curve = FractionCurve::Linear { c1: num / den };
            let diag = diagnostics(samples, &curve, 1, 0);
            Ok((FractionFit::new(task.clone(), curve)?, diag))
        }
        FractionForm::Flexible => {
            check_samples(samples, 4, form)?;
            let problem = FlexibleProblem { samples };
            let sampler = StartSampler::new(2, config.seed);
            let span = EXPONENT_START_RANGE.1 - EXPONENT_START_RANGE.0;
            let starts: Vec<Vec<f64>> = (0..config.multistart_count)
                .map(|i| {
                    let u = sampler.point(i);
                    let c2 = EXPONENT_START_RANGE.0 + u[0] * span;
                    let c3 = EXPONENT_START_RANGE.0 + u[1] * span;
                    // c1 enters linearly: start from its optimum given (c2, c3).
                    let (num, den) = samples.iter().fold((0.0, 0.0), |(num, den), s| {
                        let g = FlexibleProblem::bump(s.p, c2, c3).0;
                        (num + g * (s.f - s.p), den + g * g)
                    });
                    let c1 = if den > 0.0 { num / den } else { 0.0 };
                    vec![c1, c2.ln(), c3.ln()]
                })
                .collect();
            let (start_index, best) = best_of(&problem, &starts, config)?;
            for (name, ln_c) in [("c2", best.x[1]), ("c3", best.x[2])] {
                if ln_c.is_nan() || ln_c <= MIN_LN_EXPONENT {
                    return Err(FitError::Boundary(format!("flexible exponent {name} collapsed to {:e}", ln_c.exp())));
                }
            }
            let curve = FractionCurve::Flexible {
                c1: best.x[0],
                c2: best.x[1].exp(),
                c3: best.x[2].exp(),
            };
            let mut diag = diagnostics(samples, &curve, 3, start_index);
            diag.converged &= best.converged;
            diag.objective = best.cost;
            Ok((FractionFit::new(task.clone(), curve)?, diag))
        }
    }
}
