use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataio::{
    build_fit_dataset, dataset_hash, CorrectionPolicy, FractionFitRecord, LawBundle, Provenance,
    RunRecord, TaskLaws, WeightingFit, SCHEMA_VERSION,
};
use crate::fitting::{
    bootstrap_uncertainty, fit_fraction_curve, fit_joint_law, fit_power_law, FitConfig, FitError,
    FractionSample, JointLawRefit, PowerLawRefit, SizePoint, WeightedPoint,
};
use crate::lawcore::{effective_fraction, FractionForm, LawError, MetricDirection, TaskId, WeightKey};

/// Flexible fraction curves are only fitted with at least this many
/// weightings (including p = 1).
pub const MIN_FLEXIBLE_WEIGHTINGS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub direction: MetricDirection,
    pub fit: FitConfig,
    /// Bootstrap replicates per fit; 0 skips uncertainty estimation.
    pub bootstrap_replicates: usize,
    pub bootstrap_sigma: f64,
    pub correction: CorrectionPolicy,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            direction: MetricDirection::LossLike,
            fit: FitConfig::default(),
            bootstrap_replicates: 0,
            bootstrap_sigma: 0.01,
            correction: CorrectionPolicy::none(),
        }
    }
}

/// Fits every task and assembles the bundle. Tasks are analysed in
/// parallel; the first failure in task order is returned.
pub fn analyze(
    records: &[RunRecord],
    tasks: &[TaskId],
    testset: &str,
    metric: &str,
    config: &AnalysisConfig,
) -> Result<LawBundle, AnalysisError> {
    if tasks.is_empty() {
        return Err(AnalysisError::InvalidInput("no tasks requested".into()));
    }
    let unique: BTreeSet<&TaskId> = tasks.iter().collect();
    if unique.len() != tasks.len() {
        return Err(AnalysisError::InvalidInput("task list contains duplicates".into()));
    }
    let results: Vec<Result<TaskLaws, AnalysisError>> = tasks
        .par_iter()
        .map(|task| {
            analyze_task(records, task, testset, metric, config).map_err(|source| AnalysisError::Task {
                task: task.clone(),
                source: Box::new(source),
            })
        })
        .collect();
    let mut laws = BTreeMap::new();
    for (task, result) in tasks.iter().zip(results) {
        laws.insert(task.clone(), result?);
    }

    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let bundle = LawBundle {
        schema_version: SCHEMA_VERSION,
        metric: metric.to_string(),
        direction: config.direction,
        testset: testset.to_string(),
        tasks: laws,
        provenance: Provenance {
            dataset_hash: dataset_hash(&sorted)?,
            config: serde_json::to_value(config).map_err(|e| AnalysisError::InvalidInput(e.to_string()))?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

fn analyze_task(
    records: &[RunRecord],
    task: &TaskId,
    testset: &str,
    metric: &str,
    config: &AnalysisConfig,
) -> Result<TaskLaws, AnalysisError> {
    let data = build_fit_dataset(records, task, testset, metric, &config.correction)?;
    let points: Vec<WeightedPoint> = data.iter().map(|d| d.weighted()).collect();
    let (joint, joint_diagnostics) = fit_joint_law(task, &points, config.direction, &config.fit)?;
    if joint.baseline_beta().is_err() {
        return Err(FitError::Law(LawError::MissingBaseline(task.clone())).into());
    }
    let single_task = joint.single_task()?;

    let effective_fractions: BTreeMap<WeightKey, f64> = joint
        .betas
        .keys()
        .map(|k| Ok((*k, effective_fraction(&joint, k.value())?)))
        .collect::<Result<_, LawError>>()?;
    let samples: Vec<FractionSample> =
        effective_fractions.iter().map(|(k, f)| FractionSample::new(k.value(), *f)).collect();
    let mut forms = vec![FractionForm::Linear];
    if samples.len() >= MIN_FLEXIBLE_WEIGHTINGS {
        forms.insert(0, FractionForm::Flexible);
    }
    let mut fractions = Vec::new();
    for form in forms {
        match fit_fraction_curve(task, &samples, form, &config.fit) {
            Ok((fit, diagnostics)) => fractions.push(FractionFitRecord { fit, diagnostics }),
            // A linear-shaped curve pushes the flexible exponents to zero; the
            // linear fit then stands alone.
            Err(FitError::Boundary(_)) if form == FractionForm::Flexible => {}
            Err(e) => return Err(e.into()),
        }
    }

    let mut by_key: BTreeMap<WeightKey, Vec<SizePoint>> = BTreeMap::new();
    for pt in &points {
        by_key.entry(WeightKey::from_weight(pt.p)?).or_default().push(SizePoint::new(pt.n, pt.y));
    }
    let mut per_weighting = BTreeMap::new();
    for (key, pts) in by_key {
        let mut sizes: Vec<f64> = pts.iter().map(|p| p.n).collect();
        sizes.sort_by(f64::total_cmp);
        sizes.dedup();
        if sizes.len() < 3 {
            continue;
        }
        let (params, diagnostics) = fit_power_law(&pts, config.direction, &config.fit)?;
        let uncertainty = if config.bootstrap_replicates > 0 {
            let refit = PowerLawRefit { direction: config.direction, config: config.fit.clone() };
            Some(bootstrap_uncertainty(
                &pts,
                &refit,
                config.bootstrap_sigma,
                config.bootstrap_replicates,
                config.fit.seed,
            )?)
        } else {
            None
        };
        per_weighting.insert(key, WeightingFit { params, diagnostics, uncertainty });
    }

    let uncertainty = if config.bootstrap_replicates > 0 {
        let refit = JointLawRefit { task: task.clone(), direction: config.direction, config: config.fit.clone() };
        Some(bootstrap_uncertainty(
            &points,
            &refit,
            config.bootstrap_sigma,
            config.bootstrap_replicates,
            config.fit.seed,
        )?)
    } else {
        None
    };

    Ok(TaskLaws {
        joint,
        joint_diagnostics,
        single_task,
        per_weighting,
        effective_fractions,
        fractions,
        uncertainty,
        observations: points,
    })
}
