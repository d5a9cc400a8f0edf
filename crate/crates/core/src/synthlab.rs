//! Synthetic experiment records generated from known laws.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{EvalRecord, ModelSpec, RunRecord, TrainingSpec};
use crate::fitting::CurvePoint;
use crate::lawcore::{
    eval_law, FractionCurve, LawError, MetricDirection, ModelSize, PowerLawParams, TaskId, WeightKey,
    WeightVector,
};

/// Models below this many parameters train for the short schedule.
const LONG_SCHEDULE_THRESHOLD: f64 = 5e8;
const SHORT_STEPS: u64 = 500_000;
const LONG_STEPS: u64 = 1_000_000;
const BATCH_TOKENS: u64 = 500_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("no ground-truth beta for task `{task}` at weight {p}")]
    Coverage { task: TaskId, p: f64 },
    #[error("weighting mentions task `{0}` which has no ground truth")]
    UnknownTask(TaskId),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Law(#[from] LawError),
}

/// How a task's multiplicative factor depends on its own weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaMap {
    Tabulated { betas: BTreeMap<WeightKey, f64> },
    /// `β(p) = β₁ · f(p)^-α`.
    FromFraction { beta_one: f64, fraction: FractionCurve },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTruth {
    pub alpha: f64,
    pub l_inf: f64,
    pub beta: BetaMap,
}

impl TaskTruth {
    pub fn tabulated(alpha: f64, l_inf: f64, betas: &[(f64, f64)]) -> Result<Self, SynthError> {
        let betas = betas
            .iter()
            .map(|&(p, b)| Ok((WeightKey::from_weight(p)?, b)))
            .collect::<Result<_, LawError>>()?;
        Ok(Self { alpha, l_inf, beta: BetaMap::Tabulated { betas } })
    }

    pub fn from_fraction(alpha: f64, l_inf: f64, beta_one: f64, fraction: FractionCurve) -> Self {
        Self { alpha, l_inf, beta: BetaMap::FromFraction { beta_one, fraction } }
    }

    pub fn beta_at(&self, task: &TaskId, p: f64) -> Result<f64, SynthError> {
        let beta = match &self.beta {
            BetaMap::Tabulated { betas } => {
                let key = WeightKey::from_weight(p)?;
                *betas.get(&key).ok_or_else(|| SynthError::Coverage { task: task.clone(), p })?
            }
            BetaMap::FromFraction { beta_one, fraction } => {
                if p == 1.0 {
                    *beta_one
                } else {
                    beta_one * fraction.eval(p)?.powf(-self.alpha)
                }
            }
        };
        if !(beta.is_finite() && beta > 0.0) {
            return Err(SynthError::InvalidInput(format!("beta {beta} for `{task}` at p = {p} is not positive")));
        }
        Ok(beta)
    }

    /// The law this task follows when trained at own weight `p`.
    pub fn law_at(&self, task: &TaskId, p: f64, direction: MetricDirection) -> Result<PowerLawParams, SynthError> {
        Ok(PowerLawParams::with_direction(self.beta_at(task, p)?, self.alpha, self.l_inf, direction)?)
    }

    pub fn value(&self, task: &TaskId, p: f64, n: ModelSize, direction: MetricDirection) -> Result<f64, SynthError> {
        Ok(eval_law(&self.law_at(task, p, direction)?, direction, n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tasks: BTreeMap<TaskId, TaskTruth>,
    pub multiplicative_sigma: f64,
    pub seed: u64,
    pub direction: MetricDirection,
    pub metric: String,
    pub testset: String,
}

impl GroundTruth {
    pub fn new(tasks: BTreeMap<TaskId, TaskTruth>, multiplicative_sigma: f64, seed: u64) -> Self {
        Self {
            tasks,
            multiplicative_sigma,
            seed,
            direction: MetricDirection::LossLike,
            metric: "loss".into(),
            testset: "synthetic".into(),
        }
    }

    pub fn task(&self, task: &TaskId) -> Result<&TaskTruth, SynthError> {
        self.tasks.get(task).ok_or_else(|| SynthError::UnknownTask(task.clone()))
    }
}

/// Training schedule by model size.
pub fn training_steps(n: f64) -> u64 {
    if n < LONG_SCHEDULE_THRESHOLD {
        SHORT_STEPS
    } else {
        LONG_STEPS
    }
}

/// `count` log-spaced values over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo * (hi / lo).powf(i as f64 / (count - 1) as f64)
                }
            })
            .collect(),
    }
}

/// Two-task weightings `(p, 1 − p)` for each `p` in `grid`.
pub fn pair_weightings(first: &TaskId, second: &TaskId, grid: &[f64]) -> Result<Vec<WeightVector>, SynthError> {
    grid.iter()
        .map(|&p| Ok(WeightVector::pair(first.clone(), second.clone(), p)?))
        .collect()
}

/// One record per `(size, weighting)`, in size-major order. Sizes are rounded
/// to whole parameter counts and every value is the law evaluated at the
/// rounded size, times `1 + σ·z`. Record `k` draws its noise from ChaCha
/// stream `k` of the seed.
pub fn generate_dataset(
    truth: &GroundTruth,
    sizes: &[ModelSize],
    weightings: &[WeightVector],
) -> Result<Vec<RunRecord>, SynthError> {
    if !(truth.multiplicative_sigma.is_finite() && truth.multiplicative_sigma >= 0.0) {
        return Err(SynthError::InvalidInput("multiplicative_sigma must be non-negative".into()));
    }
    let rounded: Vec<u64> = sizes.iter().map(|n| n.get().round().max(1.0) as u64).collect();
    let mut sorted = rounded.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(SynthError::InvalidInput("sizes must be distinct".into()));
    }
    for w in weightings {
        w.validate()?;
        for (task, p) in w.iter() {
            let t = truth.task(task)?;
            if p > 0.0 {
                t.beta_at(task, p)?;
            }
        }
    }

    let jobs: Vec<(usize, u64, &WeightVector)> = rounded
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| weightings.iter().enumerate().map(move |(j, w)| (i * weightings.len() + j, n, w)))
        .collect();
    let width = |count: usize| count.max(1).to_string().len();
    let (size_width, weight_width) = (width(sizes.len()), width(weightings.len()));

    jobs.par_iter()
        .map(|&(k, n, mixture)| {
            let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
            rng.set_stream(k as u64);
            let steps = training_steps(n as f64);
            let size = ModelSize::new(n as f64)?;
            let mut evals = Vec::new();
            let mut kept = BTreeMap::new();
            for (task, p) in mixture.iter() {
                if p == 0.0 {
                    continue;
                }
                kept.insert(task.clone(), p);
                let exact = truth.task(task)?.value(task, p, size, truth.direction)?;
                let z: f64 = StandardNormal.sample(&mut rng);
                evals.push(EvalRecord {
                    task: task.clone(),
                    testset: truth.testset.clone(),
                    metric: truth.metric.clone(),
                    value: exact * (1.0 + truth.multiplicative_sigma * z),
                    at_step: steps,
                    zero_shot: false,
                });
            }
            let (i, j) = (k / weightings.len().max(1), k % weightings.len().max(1));
            Ok(RunRecord {
                run_id: format!("s{i:0size_width$}-w{j:0weight_width$}"),
                model: ModelSpec::with_noneb(n),
                mixture: WeightVector::new(kept)?,
                training: TrainingSpec { steps, batch_tokens: BATCH_TOKENS },
                evals,
            })
        })
        .collect()
}

/// `y(s) = b·s^-a + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CurveParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, SynthError> {
        if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0 && c.is_finite() && c >= 0.0) {
            return Err(SynthError::InvalidInput(format!(
                "curve needs a > 0, b > 0, c >= 0; got a = {a}, b = {b}, c = {c}"
            )));
        }
        Ok(Self { a, b, c })
    }

    /// Chooses `c` so the curve reaches `final_value` at `at_step`, which
    /// ties a learning curve to the converged value its law predicts.
    pub fn anchored(final_value: f64, a: f64, b: f64, at_step: u64) -> Result<Self, SynthError> {
        Self::new(a, b, final_value - b * (at_step as f64).powf(-a))
    }

    pub fn eval(&self, step: f64) -> f64 {
        self.b * step.powf(-self.a) + self.c
    }
}

/// Evaluates the curve at each step, with optional seeded multiplicative
/// noise `(sigma, seed)`.
pub fn generate_training_curve(params: &CurveParams, steps: &[u64], noise: Option<(f64, u64)>) -> Vec<CurvePoint> {
    let mut rng = noise.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    steps
        .iter()
        .map(|&s| {
            let mut y = params.eval(s as f64);
            if let (Some((sigma, _)), Some(rng)) = (noise, rng.as_mut()) {
                let z: f64 = StandardNormal.sample(rng);
                y *= 1.0 + sigma * z;
            }
            CurvePoint::new(s, y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{convergence_correct, FitConfig, DEFAULT_TARGET_STEP};
    use crate::lawcore::{eval_joint_loss, eval_power_law, JointLaw};

    fn t(s: &str) -> TaskId {
        TaskId::new(s).unwrap()
    }

    fn sizes() -> Vec<ModelSize> {
        log_spaced(2e7, 1e9, 8).into_iter().map(|n| ModelSize::new(n).unwrap()).collect()
    }

    fn tabulated_truth(sigma: f64) -> GroundTruth {
        let de = TaskTruth::tabulated(0.3, 1.0, &[(0.5, 150.0), (1.0, 100.0)]).unwrap();
        let fr = TaskTruth::tabulated(0.3, 1.2, &[(0.5, 140.0)]).unwrap();
        GroundTruth::new([(t("en-de"), de), (t("en-fr"), fr)].into(), sigma, 11)
    }

    fn single(task: &str) -> WeightVector {
        WeightVector::new([(t(task), 1.0)].into()).unwrap()
    }

    #[test]
    fn noiseless_values_equal_joint_law() {
        let truth = tabulated_truth(0.0);
        let weightings = vec![
            WeightVector::pair(t("en-de"), t("en-fr"), 0.5).unwrap(),
            single("en-de"),
        ];
        let records = generate_dataset(&truth, &sizes(), &weightings).unwrap();
        assert_eq!(records.len(), 16);
        let law = JointLaw::new(
            t("en-de"),
            0.3,
            1.0,
            [(WeightKey::from_weight(0.5).unwrap(), 150.0), (WeightKey::ONE, 100.0)].into(),
            MetricDirection::LossLike,
        )
        .unwrap();
        for r in &records {
            r.validate().unwrap();
            let e = r.evals.iter().find(|e| e.task == t("en-de")).unwrap();
            let n = ModelSize::new(r.model.n_noneb as f64).unwrap();
            assert_eq!(e.value, eval_joint_loss(&law, r.weight_of(&t("en-de")), n).unwrap());
            assert_eq!(r.training.steps, training_steps(n.get()));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let truth = tabulated_truth(0.01);
        let w = vec![WeightVector::pair(t("en-de"), t("en-fr"), 0.5).unwrap()];
        let a = generate_dataset(&truth, &sizes(), &w).unwrap();
        let b = generate_dataset(&truth, &sizes(), &w).unwrap();
        assert_eq!(a, b);
        let mut other = truth.clone();
        other.seed = 12;
        assert_ne!(a, generate_dataset(&other, &sizes(), &w).unwrap());
    }

    #[test]
    fn uncovered_weight_is_an_error() {
        let truth = tabulated_truth(0.0);
        let w = vec![WeightVector::pair(t("en-de"), t("en-fr"), 0.3).unwrap()];
        assert!(matches!(generate_dataset(&truth, &sizes(), &w), Err(SynthError::Coverage { .. })));
        let unknown = vec![WeightVector::pair(t("en-de"), t("en-zh"), 0.5).unwrap()];
        assert!(matches!(generate_dataset(&truth, &sizes(), &unknown), Err(SynthError::UnknownTask(_))));
    }

    #[test]
    fn duplicate_sizes_rejected() {
        let truth = tabulated_truth(0.0);
        let s = vec![ModelSize::new(1e8).unwrap(), ModelSize::new(1e8 + 0.2).unwrap()];
        assert!(matches!(
            generate_dataset(&truth, &s, &[single("en-de")]),
            Err(SynthError::InvalidInput(_))
        ));
    }

    #[test]
    fn identity_fraction_halves_parameters() {
        let truth_de = TaskTruth::from_fraction(0.3, 1.0, 100.0, FractionCurve::Linear { c1: 1.0 });
        let truth = GroundTruth::new(
            [(t("en-de"), truth_de.clone()), (t("en-fr"), truth_de)].into(),
            0.0,
            0,
        );
        let w = vec![WeightVector::pair(t("en-de"), t("en-fr"), 0.5).unwrap()];
        let single_law = PowerLawParams::new(100.0, 0.3, 1.0).unwrap();
        for r in generate_dataset(&truth, &sizes(), &w).unwrap() {
            let half = ModelSize::new(r.model.n_noneb as f64 / 2.0).unwrap();
            let want = eval_power_law(&single_law, half);
            for e in &r.evals {
                assert!(((e.value - want) / want).abs() < 1e-13, "{} vs {want}", e.value);
            }
        }
    }

    #[test]
    fn fraction_truth_keeps_baseline_exact() {
        let tt = TaskTruth::from_fraction(0.4, 1.0, 80.0, FractionCurve::Flexible { c1: 1.2, c2: 0.7, c3: 1.5 });
        assert_eq!(tt.beta_at(&t("x"), 1.0).unwrap(), 80.0);
    }

    #[test]
    fn noise_is_unbiased() {
        let truth_de = TaskTruth::tabulated(0.3, 1.0, &[(1.0, 100.0)]).unwrap();
        let mut truth = GroundTruth::new([(t("en-de"), truth_de)].into(), 0.01, 3);
        let n = ModelSize::new(1e8).unwrap();
        let exact = truth.tasks[&t("en-de")].value(&t("en-de"), 1.0, n, MetricDirection::LossLike).unwrap();
        let reps = 10_000;
        let mut sum = 0.0;
        for seed in 0..reps {
            truth.seed = seed;
            let r = generate_dataset(&truth, &[n], &[single("en-de")]).unwrap();
            sum += r[0].evals[0].value;
        }
        let mean = sum / reps as f64;
        let se = 0.01 * exact / (reps as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn curve_value_matches_independent_evaluation() {
        let c = CurveParams::new(0.2, 3.0, 1.5).unwrap();
        let pts = generate_training_curve(&c, &[1_000_000], None);
        // mpmath: 3·10^-1.2 + 1.5 = 1.68928720334405799…
        assert!((pts[0].y - 1.689_287_203_344_058).abs() < 1e-12);
    }

    #[test]
    fn flat_limit() {
        let c = CurveParams::new(1e-12, 0.5, 2.0).unwrap();
        for p in generate_training_curve(&c, &[10, 1000, 1_000_000], None) {
            assert!((p.y - 2.5).abs() < 1e-9);
        }
        assert!(CurveParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn anchored_curve_hits_final_value() {
        let c = CurveParams::anchored(2.0, 0.3, 5.0, 500_000).unwrap();
        assert!((c.eval(500_000.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_curve_survives_correction() {
        let c = CurveParams::new(0.2, 3.0, 1.5).unwrap();
        let steps: Vec<u64> = log_spaced(1e3, 5e5, 16).into_iter().map(|s| s.round() as u64).collect();
        let curve = generate_training_curve(&c, &steps, None);
        let out = convergence_correct(&curve, DEFAULT_TARGET_STEP, MetricDirection::LossLike, &FitConfig::default()).unwrap();
        let want = c.eval(DEFAULT_TARGET_STEP as f64);
        assert!(((out.value - want) / want).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_fixed_point() {
        use crate::fitting::fit_joint_law;
        use crate::dataio::{build_fit_dataset, CorrectionPolicy};
        let truth = tabulated_truth(0.0);
        let weightings = vec![WeightVector::pair(t("en-de"), t("en-fr"), 0.5).unwrap(), single("en-de")];
        let records = generate_dataset(&truth, &sizes(), &weightings).unwrap();
        let pts: Vec<_> = build_fit_dataset(&records, &t("en-de"), "synthetic", "loss", &CorrectionPolicy::none())
            .unwrap()
            .iter()
            .map(|d| d.weighted())
            .collect();
        let (law, _) = fit_joint_law(&t("en-de"), &pts, MetricDirection::LossLike, &FitConfig::default()).unwrap();
        let refit = TaskTruth::tabulated(
            law.alpha,
            law.l_inf,
            &law.betas.iter().map(|(k, b)| (k.value(), *b)).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut again = truth.clone();
        again.tasks.insert(t("en-de"), refit);
        let regenerated = generate_dataset(&again, &sizes(), &weightings).unwrap();
        for (a, b) in records.iter().zip(&regenerated) {
            let (x, y) = (a.evals[0].value, b.evals[0].value);
            assert!(((x - y) / x).abs() < 1e-6, "{x} vs {y}");
        }
    }
}
