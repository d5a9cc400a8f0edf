//! Parametric bootstrap: perturb every observation by Gaussian noise with a
//! standard deviation proportional to its value, refit, and report the
//! per-coefficient spread across replicates.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_bivariate_law, fit_fraction_curve, fit_joint_law, fit_power_law, BivariatePoint,
    FitConfig, FitError, FractionSample, SizePoint, WeightedPoint,
};
use crate::lawcore::{effective_fraction, FractionCurve, FractionForm, MetricDirection, TaskId};

/// Minimum share of replicates that must refit successfully.
const MIN_SUCCESS_SHARE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub std_devs: BTreeMap<String, f64>,
    pub means: BTreeMap<String, f64>,
    pub replicate_count: usize,
    pub failed_replicates: usize,
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl UncertaintyReport {
    pub fn std_dev(&self, coefficient: &str) -> Option<f64> {
        self.std_devs.get(coefficient).copied()
    }
}

/// A fitting procedure whose observations can be perturbed and refit.
pub trait Refit: Sync {
    type Point: Clone + Send + Sync;

    fn observed(point: &Self::Point) -> f64;
    fn with_observed(point: &Self::Point, y: f64) -> Self::Point;
    /// Runs the fit and names its coefficients.
    fn coefficients(&self, points: &[Self::Point]) -> Result<BTreeMap<String, f64>, FitError>;
}

pub struct PowerLawRefit {
    pub direction: MetricDirection,
    pub config: FitConfig,
}

impl Refit for PowerLawRefit {
    type Point = SizePoint;

    fn observed(point: &SizePoint) -> f64 {
        point.y
    }

    fn with_observed(point: &SizePoint, y: f64) -> SizePoint {
        SizePoint { y, ..*point }
    }

    fn coefficients(&self, points: &[SizePoint]) -> Result<BTreeMap<String, f64>, FitError> {
        let (p, _) = fit_power_law(points, self.direction, &self.config)?;
        Ok(BTreeMap::from([
            ("alpha".to_string(), p.alpha),
            ("beta".to_string(), p.beta),
            ("l_inf".to_string(), p.l_inf),
        ]))
    }
}

/// Joint-law refits report `alpha`, `l_inf`, `beta@<p>` per weighting and,
/// when the p = 1 baseline is present, `f@<p>`.
pub struct JointLawRefit {
    pub task: TaskId,
    pub direction: MetricDirection,
    pub config: FitConfig,
}

impl Refit for JointLawRefit {
    type Point = WeightedPoint;

    fn observed(point: &WeightedPoint) -> f64 {
        point.y
    }

    fn with_observed(point: &WeightedPoint, y: f64) -> WeightedPoint {
        WeightedPoint { y, ..*point }
    }

    fn coefficients(&self, points: &[WeightedPoint]) -> Result<BTreeMap<String, f64>, FitError> {
        let (law, _) = fit_joint_law(&self.task, points, self.direction, &self.config)?;
        let mut out = BTreeMap::from([
            ("alpha".to_string(), law.alpha),
            ("l_inf".to_string(), law.l_inf),
        ]);
        for (key, beta) in &law.betas {
            out.insert(format!("beta@{key}"), *beta);
            if law.baseline_beta().is_ok() {
                out.insert(format!("f@{key}"), effective_fraction(&law, key.value())?);
            }
        }
        Ok(out)
    }
}

pub struct BivariateRefit {
    pub config: FitConfig,
}

impl Refit for BivariateRefit {
    type Point = BivariatePoint;

    fn observed(point: &BivariatePoint) -> f64 {
        point.y
    }

    fn with_observed(point: &BivariatePoint, y: f64) -> BivariatePoint {
        BivariatePoint { y, ..*point }
    }

    fn coefficients(&self, points: &[BivariatePoint]) -> Result<BTreeMap<String, f64>, FitError> {
        let (p, _) = fit_bivariate_law(points, &self.config)?;
        Ok(BTreeMap::from([
            ("alpha_d".to_string(), p.alpha_d),
            ("alpha_e".to_string(), p.alpha_e),
            ("beta".to_string(), p.beta),
            ("l_inf".to_string(), p.l_inf),
        ]))
    }
}

pub struct FractionRefit {
    pub task: TaskId,
    pub form: FractionForm,
    pub config: FitConfig,
}

impl Refit for FractionRefit {
    type Point = FractionSample;

    fn observed(point: &FractionSample) -> f64 {
        point.f
    }

    fn with_observed(point: &FractionSample, f: f64) -> FractionSample {
        FractionSample { f, ..*point }
    }

    fn coefficients(&self, points: &[FractionSample]) -> Result<BTreeMap<String, f64>, FitError> {
        let (fit, _) = fit_fraction_curve(&self.task, points, self.form, &self.config)?;
        Ok(match fit.curve {
            FractionCurve::Flexible { c1, c2, c3 } => BTreeMap::from([
                ("c1".to_string(), c1),
                ("c2".to_string(), c2),
                ("c3".to_string(), c3),
            ]),
            FractionCurve::Linear { c1 } => BTreeMap::from([("c1".to_string(), c1)]),
        })
    }
}

/// Mean and sample standard deviation, computed on values divided by their
/// largest magnitude so spreads near `f64::MAX` do not overflow. Identical
/// inputs give exactly zero spread.
#[derive(Default, Clone)]
struct Moments {
    values: Vec<f64>,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.values.push(x);
    }

    fn scale(&self) -> f64 {
        let s = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s > 0.0 { s } else { 1.0 }
    }

    fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let s = self.scale();
        s * (self.values.iter().map(|v| v / s).sum::<f64>() / self.values.len() as f64)
    }

    fn std_dev(&self) -> f64 {
        let k = self.values.len();
        if k < 2 {
            return 0.0;
        }
        let s = self.scale();
        let m = self.mean() / s;
        let ss: f64 = self.values.iter().map(|v| (v / s - m).powi(2)).sum();
        s * (ss / (k - 1) as f64).sqrt()
    }
}

/// Replicate `r` draws from ChaCha stream `r` of `seed`, so replicates may
/// run in any order or in parallel and still reduce to the same report.
pub fn bootstrap_uncertainty<R: Refit>(
    points: &[R::Point],
    fitter: &R,
    sigma_fraction: f64,
    replicates: usize,
    seed: u64,
) -> Result<UncertaintyReport, FitError> {
    if replicates < 2 {
        return Err(FitError::InvalidInput("bootstrap needs at least 2 replicates".into()));
    }
    if !(sigma_fraction.is_finite() && sigma_fraction >= 0.0) {
        return Err(FitError::InvalidInput(format!(
            "sigma_fraction {sigma_fraction} must be non-negative"
        )));
    }
    let base = fitter.coefficients(points)?;

    let results: Vec<Result<BTreeMap<String, f64>, FitError>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let perturbed: Vec<R::Point> = points
                .iter()
                .map(|pt| {
                    let y = R::observed(pt);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    R::with_observed(pt, y + sigma_fraction * y.abs() * z)
                })
                .collect();
            fitter.coefficients(&perturbed)
        })
        .collect();

    let mut moments: BTreeMap<String, Moments> =
        base.keys().map(|k| (k.clone(), Moments::default())).collect();
    let mut failed = 0;
    for result in results {
        match result {
            // A replicate that ran off to infinity counts as failed.
            Ok(coeffs) if coeffs.values().all(|v| v.is_finite()) => {
                for (name, m) in moments.iter_mut() {
                    if let Some(&v) = coeffs.get(name) {
                        m.push(v);
                    }
                }
            }
            _ => failed += 1,
        }
    }
    let succeeded = replicates - failed;
    if (succeeded as f64) < MIN_SUCCESS_SHARE * replicates as f64 {
        return Err(FitError::TooManyFailedReplicates {
            failed,
            total: replicates,
        });
    }
    Ok(UncertaintyReport {
        std_devs: moments.iter().map(|(k, m)| (k.clone(), m.std_dev())).collect(),
        means: moments.iter().map(|(k, m)| (k.clone(), m.mean())).collect(),
        replicate_count: replicates,
        failed_replicates: failed,
        sigma_fraction,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> Vec<f64> {
        (0..8).map(|i| 2e7 * (50.0f64).powf(i as f64 / 7.0)).collect()
    }

    fn power_points() -> Vec<SizePoint> {
        sizes()
            .into_iter()
            .map(|n| SizePoint::new(n, 100.0 * n.powf(-0.3) + 1.0))
            .collect()
    }

    fn fitter() -> PowerLawRefit {
        PowerLawRefit {
            direction: MetricDirection::LossLike,
            config: FitConfig {
                multistart_count: 8,
                ..FitConfig::default()
            },
        }
    }

    #[test]
    fn zero_sigma_gives_zero_spread() {
        let report = bootstrap_uncertainty(&power_points(), &fitter(), 0.0, 5, 1).unwrap();
        assert_eq!(report.replicate_count, 5);
        assert!(report.std_devs.values().all(|&s| s == 0.0), "{report:?}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = bootstrap_uncertainty(&power_points(), &fitter(), 0.01, 8, 9).unwrap();
        let b = bootstrap_uncertainty(&power_points(), &fitter(), 0.01, 8, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.std_dev("alpha").unwrap() > 0.0);
        let c = bootstrap_uncertainty(&power_points(), &fitter(), 0.01, 8, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spread_scales_with_sigma() {
        let lo = bootstrap_uncertainty(&power_points(), &fitter(), 0.005, 24, 3).unwrap();
        let hi = bootstrap_uncertainty(&power_points(), &fitter(), 0.02, 24, 3).unwrap();
        let ratio = hi.std_dev("alpha").unwrap() / lo.std_dev("alpha").unwrap();
        // Linear prediction is 4; accept within a factor of two.
        assert!((2.0..=8.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn needs_two_replicates() {
        assert!(matches!(
            bootstrap_uncertainty(&power_points(), &fitter(), 0.01, 1, 0),
            Err(FitError::InvalidInput(_))
        ));
    }

    #[test]
    fn base_fit_errors_propagate() {
        let pts = &power_points()[..2];
        assert!(matches!(
            bootstrap_uncertainty(pts, &fitter(), 0.01, 4, 0),
            Err(FitError::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_values_have_zero_spread() {
        let mut m = Moments::default();
        for _ in 0..7 {
            m.push(0.1);
        }
        assert_eq!(m.std_dev(), 0.0);
        assert_eq!(m.mean(), 0.1);
    }

    #[test]
    fn huge_spread_stays_finite() {
        let mut m = Moments::default();
        for x in [1e300, -1e300, 5e299] {
            m.push(x);
        }
        assert!(m.std_dev().is_finite() && m.std_dev() > 1e300);
    }
}
