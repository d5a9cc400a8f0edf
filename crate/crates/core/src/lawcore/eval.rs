use super::types::{
    BivariateLawParams, FractionFit, JointLaw, MetricDirection, ModelSize, PowerLawParams,
};
use super::{check_task_weight, LawError};

/// `β n^-α + L∞`.
pub fn eval_power_law(params: &PowerLawParams, n: ModelSize) -> f64 {
    params.beta * n.get().powf(-params.alpha) + params.l_inf
}

/// `M∞ − β n^-α`, the increasing-saturating form for higher-is-better metrics.
pub fn eval_quality_law(params: &PowerLawParams, n: ModelSize) -> f64 {
    params.l_inf - params.beta * n.get().powf(-params.alpha)
}

pub fn eval_law(params: &PowerLawParams, direction: MetricDirection, n: ModelSize) -> f64 {
    match direction {
        MetricDirection::LossLike => eval_power_law(params, n),
        MetricDirection::QualityLike => eval_quality_law(params, n),
    }
}

/// `β n_enc^-α_e n_dec^-α_d + L∞`.
pub fn eval_bivariate_law(params: &BivariateLawParams, n_enc: ModelSize, n_dec: ModelSize) -> f64 {
    params.beta * n_enc.get().powf(-params.alpha_e) * n_dec.get().powf(-params.alpha_d)
        + params.l_inf
}

/// Evaluates the joint law at one of its fitted weightings.
///
/// Weightings that were not fitted have no β; use [`predict_any_weighting`]
/// for those.
pub fn eval_joint_loss(law: &JointLaw, p: f64, n: ModelSize) -> Result<f64, LawError> {
    let beta = law.beta(p)?;
    Ok(law.l_inf + law.direction.sign() * beta * n.get().powf(-law.alpha))
}

/// `f(p) = (β₁ / β_p)^(1/α)`. Not clamped: values above `p` (or even 1)
/// indicate synergy between tasks.
pub fn effective_fraction(law: &JointLaw, p: f64) -> Result<f64, LawError> {
    let beta_p = law.beta(p)?;
    let beta_one = law.baseline_beta()?;
    if beta_p == beta_one {
        return Ok(1.0);
    }
    Ok((beta_one / beta_p).powf(law.alpha.recip()))
}

/// Effective number of parameters allocated to the task: `f(p) · n`.
pub fn effective_params(law: &JointLaw, p: f64, n: ModelSize) -> Result<ModelSize, LawError> {
    ModelSize::new(effective_fraction(law, p)? * n.get())
}

/// Predicts the metric at any weighting from the task's single-task law and a
/// fitted fraction curve: `β₁ (f̂(p) n)^-α + L∞` (sign flipped for quality
/// metrics).
pub fn predict_any_weighting(
    single_task: &PowerLawParams,
    direction: MetricDirection,
    fit: &FractionFit,
    p: f64,
    n: ModelSize,
) -> Result<f64, LawError> {
    check_task_weight(p)?;
    let f = fit.eval(p)?;
    let n_eff = ModelSize::new(f * n.get()).map_err(|_| LawError::InvalidParameter {
        name: "f",
        value: f,
        reason: "fraction curve must be positive at the requested weight",
    })?;
    Ok(eval_law(single_task, direction, n_eff))
}

pub fn predict_loss_any_weighting(
    single_task: &PowerLawParams,
    fit: &FractionFit,
    p: f64,
    n: ModelSize,
) -> Result<f64, LawError> {
    predict_any_weighting(single_task, MetricDirection::LossLike, fit, p, n)
}

/// Evaluates the joint law two ways: directly with `β_p`, and as the
/// single-task law at `N_eff`. The pair agrees to rounding error.
pub fn neff_consistency_check(
    law: &JointLaw,
    p: f64,
    n: ModelSize,
) -> Result<(f64, f64), LawError> {
    let direct = eval_joint_loss(law, p, n)?;
    let n_eff = effective_params(law, p, n)?;
    let single = law.single_task()?;
    Ok((direct, eval_law(&single, law.direction, n_eff)))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::lawcore::{FractionCurve, TaskId, WeightKey};

    fn n(v: f64) -> ModelSize {
        ModelSize::new(v).unwrap()
    }

    fn law(betas: &[(f64, f64)], alpha: f64, l_inf: f64) -> JointLaw {
        let betas: BTreeMap<_, _> = betas
            .iter()
            .map(|&(p, b)| (WeightKey::from_weight(p).unwrap(), b))
            .collect();
        JointLaw::new(
            TaskId::new("en-de").unwrap(),
            alpha,
            l_inf,
            betas,
            MetricDirection::LossLike,
        )
        .unwrap()
    }

    fn linear(c1: f64) -> FractionFit {
        FractionFit::new(TaskId::new("en-de").unwrap(), FractionCurve::Linear { c1 }).unwrap()
    }

    #[test]
    fn power_law_values() {
        let p = PowerLawParams::new(100.0, 0.5, 1.0).unwrap();
        assert_eq!(eval_power_law(&p, n(1e4)), 2.0);
        assert_relative_eq!(eval_power_law(&p, n(1e300)), 1.0, max_relative = 1e-12);
        // mpmath, 40 digits: 16.6113883008418966599944677221635926686
        let p = PowerLawParams::new(500.0, 0.25, 0.8).unwrap();
        assert_relative_eq!(eval_power_law(&p, n(1e6)), 16.611_388_300_841_9, max_relative = 1e-14);
    }

    #[test]
    fn quality_law_increases_towards_asymptote() {
        let p = PowerLawParams::with_direction(30.0, 0.3, 60.0, MetricDirection::QualityLike).unwrap();
        assert!(eval_quality_law(&p, n(1e8)) < eval_quality_law(&p, n(1e9)));
        assert!(eval_quality_law(&p, n(1e9)) < 60.0);
    }

    #[test]
    fn bivariate_values() {
        let p = BivariateLawParams::new(100.0, 0.25, 0.25, 1.0).unwrap();
        assert_relative_eq!(eval_bivariate_law(&p, n(1e4), n(1e4)), 2.0, max_relative = 1e-15);
        let p = BivariateLawParams::new(100.0, 0.5, 0.5, 0.0).unwrap();
        assert_eq!(eval_bivariate_law(&p, n(1e4), n(1.0)), 1.0);
        // mpmath: 0.5163007189298623602204676458835988223564
        let p = BivariateLawParams::new(250.0, 0.3, 0.2, 0.5).unwrap();
        assert_relative_eq!(
            eval_bivariate_law(&p, n(2e8), n(3e8)),
            0.516_300_718_929_862_4,
            max_relative = 1e-14
        );
    }

    #[test]
    fn joint_loss_at_fitted_weightings() {
        let l = law(&[(1.0, 2.0)], 0.5, 1.0);
        assert_eq!(eval_joint_loss(&l, 1.0, n(4.0)).unwrap(), 2.0);
        assert_eq!(
            eval_joint_loss(&l, 0.3, n(4.0)),
            Err(LawError::UnknownWeighting(WeightKey::from_weight(0.3).unwrap()))
        );
        let l = law(&[(0.5, 8.0)], 1.5, 0.25);
        assert_eq!(eval_joint_loss(&l, 0.5, n(4.0)).unwrap(), 1.25);
    }

    #[test]
    fn effective_fraction_closed_forms() {
        assert_eq!(effective_fraction(&law(&[(1.0, 2.0), (0.5, 4.0)], 0.5, 1.0), 0.5).unwrap(), 0.25);
        assert_eq!(effective_fraction(&law(&[(1.0, 2.0), (0.5, 2.0)], 0.5, 1.0), 0.5).unwrap(), 1.0);
        assert_eq!(effective_fraction(&law(&[(1.0, 2.0)], 0.7, 1.0), 1.0).unwrap(), 1.0);
        assert_relative_eq!(
            effective_fraction(&law(&[(1.0, 1.0), (0.5, 8.0)], 1.5, 1.0), 0.5).unwrap(),
            0.25,
            max_relative = 1e-15
        );
        let no_base = law(&[(0.5, 8.0)], 1.5, 1.0);
        assert!(matches!(effective_fraction(&no_base, 0.5), Err(LawError::MissingBaseline(_))));
    }

    #[test]
    fn effective_params_values() {
        let l = law(&[(1.0, 2.0), (0.5, 4.0)], 0.5, 1.0);
        assert_eq!(effective_params(&l, 0.5, n(1e8)).unwrap().get(), 2.5e7);
        assert_eq!(effective_params(&l, 1.0, n(123.0)).unwrap().get(), 123.0);
        // mpmath: 182181455.7051778364546733063037117557399
        let l = law(&[(1.0, 3.0), (0.4, 5.0)], 0.3, 1.0);
        assert_relative_eq!(
            effective_params(&l, 0.4, n(1e9)).unwrap().get(),
            182_181_455.705_177_84,
            max_relative = 1e-13
        );
    }

    #[test]
    fn fraction_curve_values() {
        let flex = FractionCurve::Flexible { c1: 1.0, c2: 1.0, c3: 1.0 };
        assert_eq!(flex.eval(0.5).unwrap(), 0.75);
        assert_eq!(flex.eval(1.0).unwrap(), 1.0);
        assert_eq!(FractionCurve::Linear { c1: 0.5 }.eval(0.5).unwrap(), 0.75);
        assert_eq!(flex.eval(1.2), Err(LawError::Domain(1.2)));
        assert_eq!(flex.eval(-0.1), Err(LawError::Domain(-0.1)));
    }

    #[test]
    fn predict_any_weighting_cases() {
        let single = PowerLawParams::new(100.0, 0.5, 1.0).unwrap();
        let fit = linear(0.3);
        assert_eq!(
            predict_loss_any_weighting(&single, &fit, 1.0, n(1e4)).unwrap(),
            eval_power_law(&single, n(1e4))
        );
        // f̂(0.5) = 0.25 with c1 = 1.5
        let quarter = linear(1.5);
        assert_eq!(quarter.eval(0.5).unwrap(), 0.25);
        assert_eq!(predict_loss_any_weighting(&single, &quarter, 0.5, n(1e4)).unwrap(), 3.0);
        assert_eq!(
            predict_loss_any_weighting(&single, &fit, 0.0, n(1e4)),
            Err(LawError::ZeroShot)
        );
    }

    #[test]
    fn identity_fraction_matches_single_task_at_pn() {
        let single = PowerLawParams::new(80.0, 0.35, 1.2).unwrap();
        let id = FractionFit::new(TaskId::new("t").unwrap(), FractionCurve::identity()).unwrap();
        for &p in &[0.05, 0.3, 0.5, 0.95] {
            let got = predict_loss_any_weighting(&single, &id, p, n(5e8)).unwrap();
            assert_relative_eq!(got, eval_power_law(&single, n(p * 5e8)), max_relative = 1e-14);
        }
    }

    #[test]
    fn consistency_at_p_one() {
        let l = law(&[(1.0, 2.0), (0.5, 4.0)], 0.5, 1.0);
        let (a, b) = neff_consistency_check(&l, 1.0, n(1e6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, eval_joint_loss(&l, 1.0, n(1e6)).unwrap());
    }

    proptest! {
        #[test]
        fn power_law_strictly_decreasing(
            beta in 1e-3f64..1e4, alpha in 0.01f64..2.0, l_inf in 0.0f64..10.0,
            n1 in 1.0f64..1e9, ratio in 1.01f64..100.0,
        ) {
            let p = PowerLawParams::new(beta, alpha, l_inf).unwrap();
            let reducible = |m: f64| beta * m.powf(-alpha);
            prop_assert!(reducible(n1 * ratio) < reducible(n1));
            // The reducible term can fall below one ulp of l_inf.
            prop_assert!(eval_power_law(&p, n(n1 * ratio)) <= eval_power_law(&p, n(n1)));
            prop_assert!(eval_power_law(&p, n(n1)) >= l_inf);
        }

        #[test]
        fn effective_params_is_scale_independent(
            b1 in 0.1f64..1e3, bp_ratio in 1.0f64..50.0, alpha in 0.05f64..1.5, size in 1e6f64..1e10,
        ) {
            let l = law(&[(1.0, b1), (0.3, b1 * bp_ratio)], alpha, 1.0);
            let a = effective_params(&l, 0.3, n(size)).unwrap().get();
            let b = effective_params(&l, 0.3, n(2.0 * size)).unwrap().get();
            prop_assert_eq!(b / a, 2.0);
        }

        #[test]
        fn fraction_curves_pass_through_one(
            c1 in -5.0f64..5.0, c2 in 1e-3f64..10.0, c3 in 1e-3f64..10.0,
        ) {
            prop_assert_eq!(FractionCurve::Flexible { c1, c2, c3 }.eval(1.0).unwrap(), 1.0);
            prop_assert_eq!(FractionCurve::Linear { c1 }.eval(1.0).unwrap(), 1.0);
        }
    }
}
