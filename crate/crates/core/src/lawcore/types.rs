use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::LawError;

/// Tolerance on `sum(weights) == 1` for a [`WeightVector`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Identifier of one task (language pair), e.g. `en-de`.
///
/// The optional direction tag is free-form metadata such as `En→XX`. On the
/// wire a task is a single string, `name` or `name@tag`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId {
    name: String,
    direction: Option<String>,
}

impl TaskId {
    pub fn new(name: impl Into<String>) -> Result<Self, LawError> {
        let name = name.into();
        if name.trim().is_empty() || name.contains('@') {
            return Err(LawError::InvalidWeights(format!(
                "task name {name:?} must be non-empty and must not contain '@'"
            )));
        }
        Ok(Self {
            name,
            direction: None,
        })
    }

    pub fn with_direction(mut self, tag: impl Into<String>) -> Self {
        let tag = tag.into();
        self.direction = (!tag.is_empty()).then_some(tag);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn direction(&self) -> Option<&str> {
        self.direction.as_deref()
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.direction {
            Some(tag) => write!(f, "{}@{}", self.name, tag),
            None => f.write_str(&self.name),
        }
    }
}

impl FromStr for TaskId {
    type Err = LawError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('@') {
            Some((name, tag)) => Ok(TaskId::new(name)?.with_direction(tag)),
            None => TaskId::new(s),
        }
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A task's own weight rounded to six decimals, stored as integer millionths.
///
/// Used as the map key for per-weighting quantities so keys stay stable
/// through file round-trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeightKey(u32);

impl WeightKey {
    const SCALE: f64 = 1e6;
    pub const ONE: WeightKey = WeightKey(1_000_000);

    pub fn from_weight(p: f64) -> Result<Self, LawError> {
        super::check_task_weight(p)?;
        let micros = (p * Self::SCALE).round() as u32;
        if micros == 0 {
            return Err(LawError::ZeroShot);
        }
        Ok(WeightKey(micros))
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / Self::SCALE
    }

    pub fn is_one(self) -> bool {
        self == Self::ONE
    }
}

impl fmt::Display for WeightKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

impl FromStr for WeightKey {
    type Err = LawError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let p: f64 = s
            .trim()
            .parse()
            .map_err(|_| LawError::InvalidWeights(format!("bad weighting key {s:?}")))?;
        WeightKey::from_weight(p)
    }
}

impl Serialize for WeightKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Training-mixture weights, one per task.
///
/// Deserialization does not validate; call [`WeightVector::validate`] (ingest
/// does) or build through [`WeightVector::new`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector {
    entries: BTreeMap<TaskId, f64>,
}

impl WeightVector {
    pub fn new(entries: BTreeMap<TaskId, f64>) -> Result<Self, LawError> {
        let v = Self { entries };
        v.validate()?;
        Ok(v)
    }

    /// Builds without validation, for ingest paths that report violations
    /// per record.
    pub(crate) fn unchecked(entries: BTreeMap<TaskId, f64>) -> Self {
        Self { entries }
    }

    /// Two-task mixture `(p, 1 - p)`.
    pub fn pair(first: TaskId, second: TaskId, p: f64) -> Result<Self, LawError> {
        if first == second {
            return Err(LawError::InvalidWeights("pair needs two distinct tasks".into()));
        }
        let mut entries = BTreeMap::new();
        entries.insert(first, p);
        entries.insert(second, 1.0 - p);
        Self::new(entries)
    }

    pub fn validate(&self) -> Result<(), LawError> {
        if self.entries.is_empty() {
            return Err(LawError::InvalidWeights("at least one entry required".into()));
        }
        for (task, &w) in &self.entries {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(LawError::InvalidWeights(format!(
                    "weight of `{task}` is {w}, must lie in [0, 1]"
                )));
            }
        }
        let sum: f64 = self.entries.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(LawError::InvalidWeights(format!(
                "weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOLERANCE:e}"
            )));
        }
        Ok(())
    }

    pub fn weight(&self, task: &TaskId) -> Option<f64> {
        self.entries.get(task).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TaskId, f64)> {
        self.entries.iter().map(|(t, &w)| (t, w))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whether a metric improves downwards (cross-entropy) or upwards (ChrF, BLEURT).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    /// `L(n) = β n^-α + L∞`
    #[default]
    LossLike,
    /// `M(n) = M∞ − β n^-α`
    QualityLike,
}

impl MetricDirection {
    /// Sign applied to the reducible term.
    pub fn sign(self) -> f64 {
        match self {
            MetricDirection::LossLike => 1.0,
            MetricDirection::QualityLike => -1.0,
        }
    }
}

impl fmt::Display for MetricDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricDirection::LossLike => "loss_like",
            MetricDirection::QualityLike => "quality_like",
        })
    }
}

impl FromStr for MetricDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss" | "loss_like" => Ok(Self::LossLike),
            "quality" | "quality_like" => Ok(Self::QualityLike),
            other => Err(format!("unknown metric direction {other:?}")),
        }
    }
}

/// Count of non-embedding parameters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelSize(f64);

impl ModelSize {
    pub fn new(n: f64) -> Result<Self, LawError> {
        if !(n.is_finite() && n > 0.0) {
            return Err(LawError::InvalidParameter {
                name: "n",
                value: n,
                reason: "model size must be positive and finite",
            });
        }
        Ok(Self(n))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), LawError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LawError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

fn asymptote(direction: MetricDirection, value: f64) -> Result<(), LawError> {
    if !value.is_finite() {
        return Err(LawError::InvalidParameter {
            name: "l_inf",
            value,
            reason: "must be finite",
        });
    }
    if direction == MetricDirection::LossLike && value < 0.0 {
        return Err(LawError::InvalidParameter {
            name: "l_inf",
            value,
            reason: "irreducible loss must be non-negative",
        });
    }
    Ok(())
}

/// `(β, α, L∞)` of a univariate power law.
///
/// For quality-like metrics `l_inf` holds the asymptotic quality `M∞`, which
/// may be negative (BLEURT).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub beta: f64,
    pub alpha: f64,
    pub l_inf: f64,
}

impl PowerLawParams {
    pub fn new(beta: f64, alpha: f64, l_inf: f64) -> Result<Self, LawError> {
        Self::with_direction(beta, alpha, l_inf, MetricDirection::LossLike)
    }

    pub fn with_direction(
        beta: f64,
        alpha: f64,
        l_inf: f64,
        direction: MetricDirection,
    ) -> Result<Self, LawError> {
        let p = Self { beta, alpha, l_inf };
        p.validate(direction)?;
        Ok(p)
    }

    pub fn validate(&self, direction: MetricDirection) -> Result<(), LawError> {
        positive("beta", self.beta)?;
        positive("alpha", self.alpha)?;
        asymptote(direction, self.l_inf)
    }
}

/// `(β, α_e, α_d, L∞)` of the encoder/decoder law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateLawParams {
    pub beta: f64,
    pub alpha_e: f64,
    pub alpha_d: f64,
    pub l_inf: f64,
}

impl BivariateLawParams {
    pub fn new(beta: f64, alpha_e: f64, alpha_d: f64, l_inf: f64) -> Result<Self, LawError> {
        positive("beta", beta)?;
        positive("alpha_e", alpha_e)?;
        positive("alpha_d", alpha_d)?;
        asymptote(MetricDirection::LossLike, l_inf)?;
        Ok(Self {
            beta,
            alpha_e,
            alpha_d,
            l_inf,
        })
    }
}

/// Joint law for one task: exponent and asymptote shared across weightings,
/// one multiplicative factor per observed weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLaw {
    pub task: TaskId,
    pub alpha: f64,
    pub l_inf: f64,
    pub betas: BTreeMap<WeightKey, f64>,
    pub direction: MetricDirection,
}

impl JointLaw {
    pub fn new(
        task: TaskId,
        alpha: f64,
        l_inf: f64,
        betas: BTreeMap<WeightKey, f64>,
        direction: MetricDirection,
    ) -> Result<Self, LawError> {
        let law = Self {
            task,
            alpha,
            l_inf,
            betas,
            direction,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<(), LawError> {
        positive("alpha", self.alpha)?;
        asymptote(self.direction, self.l_inf)?;
        for &beta in self.betas.values() {
            positive("beta", beta)?;
        }
        Ok(())
    }

    pub fn beta(&self, p: f64) -> Result<f64, LawError> {
        let key = WeightKey::from_weight(p)?;
        self.betas
            .get(&key)
            .copied()
            .ok_or(LawError::UnknownWeighting(key))
    }

    pub fn baseline_beta(&self) -> Result<f64, LawError> {
        self.betas
            .get(&WeightKey::ONE)
            .copied()
            .ok_or_else(|| LawError::MissingBaseline(self.task.clone()))
    }

    /// The single-task law `(β₁, α, L∞)`.
    pub fn single_task(&self) -> Result<PowerLawParams, LawError> {
        Ok(PowerLawParams {
            beta: self.baseline_beta()?,
            alpha: self.alpha,
            l_inf: self.l_inf,
        })
    }

    /// Number of free parameters: one β per weighting plus α and L∞.
    pub fn parameter_count(&self) -> usize {
        self.betas.len() + 2
    }
}

/// Which parametric family an effective-fraction curve belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionForm {
    /// `p + c1 p^c2 (1-p)^c3`
    Flexible,
    /// `c1 (p - 1) + 1`
    Linear,
}

impl fmt::Display for FractionForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FractionForm::Flexible => "flexible",
            FractionForm::Linear => "linear",
        })
    }
}

impl FromStr for FractionForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flexible" => Ok(Self::Flexible),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown fraction form {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FractionCurve {
    Flexible { c1: f64, c2: f64, c3: f64 },
    Linear { c1: f64 },
}

impl FractionCurve {
    pub fn form(&self) -> FractionForm {
        match self {
            FractionCurve::Flexible { .. } => FractionForm::Flexible,
            FractionCurve::Linear { .. } => FractionForm::Linear,
        }
    }

    /// The neutral curve `f(p) = p`.
    pub fn identity() -> Self {
        FractionCurve::Linear { c1: 1.0 }
    }

    pub fn validate(&self) -> Result<(), LawError> {
        match *self {
            FractionCurve::Flexible { c1, c2, c3 } => {
                if !c1.is_finite() {
                    return Err(LawError::InvalidParameter {
                        name: "c1",
                        value: c1,
                        reason: "must be finite",
                    });
                }
                positive("c2", c2)?;
                positive("c3", c3)
            }
            FractionCurve::Linear { c1 } => {
                if c1.is_finite() {
                    Ok(())
                } else {
                    Err(LawError::InvalidParameter {
                        name: "c1",
                        value: c1,
                        reason: "must be finite",
                    })
                }
            }
        }
    }

    /// Evaluates `f̂(p)` on `[0, 1]`.
    pub fn eval(&self, p: f64) -> Result<f64, LawError> {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(LawError::Domain(p));
        }
        Ok(match *self {
            FractionCurve::Flexible { c1, c2, c3 } => {
                if p == 1.0 {
                    1.0
                } else {
                    p + c1 * p.powf(c2) * (1.0 - p).powf(c3)
                }
            }
            FractionCurve::Linear { c1 } => c1 * (p - 1.0) + 1.0,
        })
    }
}

/// A fitted effective-fraction curve for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionFit {
    pub task: TaskId,
    #[serde(flatten)]
    pub curve: FractionCurve,
}

impl FractionFit {
    pub fn new(task: TaskId, curve: FractionCurve) -> Result<Self, LawError> {
        curve.validate()?;
        Ok(Self { task, curve })
    }

    pub fn form(&self) -> FractionForm {
        self.curve.form()
    }

    pub fn eval(&self, p: f64) -> Result<f64, LawError> {
        self.curve.eval(p)
    }
}
