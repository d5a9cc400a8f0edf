use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::lawcore::{TaskId, WeightVector};

/// Architecture and size of one trained model. Only `n_noneb` is required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<u64>,
    pub n_noneb: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enc_layers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dec_layers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emb_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<u32>,
}

impl ModelSpec {
    pub fn with_noneb(n_noneb: u64) -> Self {
        Self {
            n_total: None,
            n_noneb,
            enc_layers: None,
            dec_layers: None,
            emb_dim: None,
            n_heads: None,
            head_dim: None,
            mlp_dim: None,
            vocab_size: None,
        }
    }

    pub(crate) fn architecture(&self) -> [(&'static str, Option<u32>); 7] {
        [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("emb_dim", self.emb_dim),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("mlp_dim", self.mlp_dim),
            ("vocab_size", self.vocab_size),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub steps: u64,
    pub batch_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task: TaskId,
    pub testset: String,
    pub metric: String,
    pub value: f64,
    pub at_step: u64,
    /// Set for tasks that had no (or zero) weight in the training mixture.
    #[serde(default, skip_serializing_if = "is_false")]
    pub zero_shot: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub model: ModelSpec,
    pub mixture: WeightVector,
    pub training: TrainingSpec,
    pub evals: Vec<EvalRecord>,
}

/// An invariant violation, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: String,
    pub message: String,
}

impl FieldViolation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl RunRecord {
    /// Checks every record invariant.
    pub fn validate(&self) -> Result<(), FieldViolation> {
        if self.run_id.trim().is_empty() {
            return Err(FieldViolation::new("run_id", "must be non-empty"));
        }
        let m = &self.model;
        if m.n_noneb == 0 {
            return Err(FieldViolation::new("model.n_noneb", "must be positive"));
        }
        if let Some(total) = m.n_total {
            if total == 0 {
                return Err(FieldViolation::new("model.n_total", "must be positive"));
            }
            if m.n_noneb > total {
                return Err(FieldViolation::new(
                    "model.n_noneb",
                    format!("{} exceeds n_total {total}", m.n_noneb),
                ));
            }
        }
        for (name, v) in m.architecture() {
            if v == Some(0) {
                return Err(FieldViolation::new(format!("model.{name}"), "must be positive"));
            }
        }
        self.mixture
            .validate()
            .map_err(|e| FieldViolation::new("mixture", e.to_string()))?;
        if self.training.steps == 0 {
            return Err(FieldViolation::new("training.steps", "must be positive"));
        }
        if self.training.batch_tokens == 0 {
            return Err(FieldViolation::new("training.batch_tokens", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for (i, e) in self.evals.iter().enumerate() {
            let field = |f: &str| format!("evals[{i}].{f}");
            if e.testset.is_empty() {
                return Err(FieldViolation::new(field("testset"), "must be non-empty"));
            }
            if e.metric.is_empty() {
                return Err(FieldViolation::new(field("metric"), "must be non-empty"));
            }
            if !e.value.is_finite() {
                return Err(FieldViolation::new(field("value"), format!("{} is not finite", e.value)));
            }
            if e.at_step == 0 || e.at_step > self.training.steps {
                return Err(FieldViolation::new(
                    field("at_step"),
                    format!("{} outside 1..={}", e.at_step, self.training.steps),
                ));
            }
            let weight = self.mixture.weight(&e.task).unwrap_or(0.0);
            if weight == 0.0 && !e.zero_shot {
                return Err(FieldViolation::new(
                    field("task"),
                    format!("`{}` is not in the mixture and is not flagged zero_shot", e.task),
                ));
            }
            if weight > 0.0 && e.zero_shot {
                return Err(FieldViolation::new(
                    field("zero_shot"),
                    format!("`{}` has mixture weight {weight}", e.task),
                ));
            }
            if !seen.insert((&e.task, &e.testset, &e.metric, e.at_step)) {
                return Err(FieldViolation::new(
                    field("at_step"),
                    format!(
                        "duplicate eval ({}, {}, {}, {}, {})",
                        self.run_id, e.task, e.testset, e.metric, e.at_step
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Canonical form: zero-weight mixture entries become zero-shot evals.
    /// Both wire formats ingest to this form.
    pub fn canonicalize(mut self) -> Result<Self, FieldViolation> {
        if self.mixture.iter().all(|(_, w)| w == 0.0) {
            return Err(FieldViolation::new("mixture", "at least one positive weight required"));
        }
        let zero: BTreeSet<TaskId> = self
            .mixture
            .iter()
            .filter(|(_, w)| *w == 0.0)
            .map(|(t, _)| t.clone())
            .collect();
        if !zero.is_empty() {
            let kept: BTreeMap<TaskId, f64> = self
                .mixture
                .iter()
                .filter(|(_, w)| *w != 0.0)
                .map(|(t, w)| (t.clone(), w))
                .collect();
            self.mixture = WeightVector::unchecked(kept);
            for e in &mut self.evals {
                if zero.contains(&e.task) {
                    e.zero_shot = true;
                }
            }
        }
        Ok(self)
    }

    /// The task's own weight in this run's mixture (0 when absent).
    pub fn weight_of(&self, task: &TaskId) -> f64 {
        self.mixture.weight(task).unwrap_or(0.0)
    }
}
