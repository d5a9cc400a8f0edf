use serde::{Deserialize, Serialize};

use super::correlation::{Correlation, MetricPair};
use super::predict::{predict_frontier, CapacityReport, FormSelection, FrontierCurve};
use super::AnalysisError;
use crate::dataio::LawBundle;
use crate::lawcore::{eval_joint_loss, eval_law, FractionForm, ModelSize, TaskId, WeightKey};

/// Round-trip-safe form: 17 significant digits.
pub fn fmt_machine(x: f64) -> String {
    format!("{x:.16e}")
}

/// Four significant digits, switching to exponent form outside [1e-3, 1e6).
pub fn fmt_human(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..6).contains(&mag) {
        format!("{:.*}", (3 - mag).max(0) as usize, x)
    } else {
        format!("{x:.3e}")
    }
}

/// One point of a plot-data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

fn point(x: f64, y: f64, series: impl Into<String>) -> PlotPoint {
    PlotPoint { x, y, series: series.into() }
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect()
}

const CURVE_POINTS: usize = 25;

/// Metric against model size: observations, joint-law curves and
/// per-weighting fits, one series per weighting.
pub fn scaling_plot(bundle: &LawBundle, task: &TaskId) -> Result<Vec<PlotPoint>, AnalysisError> {
    let laws = bundle.task(task)?;
    let mut out: Vec<PlotPoint> = laws
        .observations
        .iter()
        .map(|o| Ok(point(o.n, o.y, format!("observed p={}", WeightKey::from_weight(o.p)?))))
        .collect::<Result<_, AnalysisError>>()?;
    let (lo, hi) = laws
        .observations
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), o| (lo.min(o.n), hi.max(o.n)));
    if lo.is_finite() && hi > lo {
        let grid = log_grid(lo, hi, CURVE_POINTS);
        for key in laws.joint.betas.keys() {
            for &n in &grid {
                let y = eval_joint_loss(&laws.joint, key.value(), ModelSize::new(n)?)?;
                out.push(point(n, y, format!("joint p={key}")));
            }
        }
        for (key, fit) in &laws.per_weighting {
            for &n in &grid {
                out.push(point(n, eval_law(&fit.params, bundle.direction, ModelSize::new(n)?), format!("per-weighting p={key}")));
            }
        }
    }
    Ok(out)
}

/// Effective fraction against weight: observed values, fitted curves and
/// the proportional reference `f = p`.
pub fn fraction_plot(bundle: &LawBundle, task: &TaskId) -> Result<Vec<PlotPoint>, AnalysisError> {
    let laws = bundle.task(task)?;
    let mut out: Vec<PlotPoint> =
        laws.effective_fractions.iter().map(|(k, f)| point(k.value(), *f, "observed")).collect();
    let grid: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    for form in [FractionForm::Flexible, FractionForm::Linear] {
        if let Some(fit) = laws.fraction(form) {
            for &p in &grid {
                out.push(point(p, fit.eval(p)?, form.to_string()));
            }
        }
    }
    out.extend(grid.iter().map(|&p| point(p, p, "proportional")));
    Ok(out)
}

/// Trade-off curves at several sizes plus observed pairs: runs of equal
/// size where the first task had weight `p` and the second `1 − p`.
pub fn frontier_plot(
    bundle: &LawBundle,
    pair: (&TaskId, &TaskId),
    sizes: &[ModelSize],
    grid: &[f64],
    selection: FormSelection,
) -> Result<Vec<PlotPoint>, AnalysisError> {
    let mut out = Vec::new();
    for &n in sizes {
        let curve = predict_frontier(bundle, pair, n, grid, selection)?;
        out.extend(curve.grid.iter().map(|g| point(g.first, g.second, format!("n={}", fmt_machine(n.get())))));
    }
    let (a, b) = (bundle.task(pair.0)?, bundle.task(pair.1)?);
    // Weight 0 is never observed, so runs of the first task alone have no partner.
    for oa in a.observations.iter().filter(|o| o.p < 1.0) {
        let partner = WeightKey::from_weight(1.0 - oa.p)?;
        for ob in &b.observations {
            if ob.n == oa.n && WeightKey::from_weight(ob.p)? == partner {
                out.push(point(oa.y, ob.y, "observed"));
            }
        }
    }
    Ok(out)
}

pub fn correlation_plot(pairs: &[MetricPair], fit: &Correlation) -> Vec<PlotPoint> {
    let mut out: Vec<PlotPoint> = pairs.iter().map(|p| point(p.loss, p.quality, "observed")).collect();
    let lo = pairs.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.loss).fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        for x in [lo, hi] {
            out.push(point(x, fit.slope * x + fit.intercept, "linear fit"));
        }
    }
    out
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| AnalysisError::InvalidInput(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn frontier_csv(curve: &FrontierCurve) -> Result<String, AnalysisError> {
    let first = curve.first.to_string();
    let second = curve.second.to_string();
    let rows = curve
        .grid
        .iter()
        .map(|g| vec![fmt_machine(g.p), fmt_machine(g.first), fmt_machine(g.second)])
        .collect();
    csv_string(&["p", &first, &second], rows)
}

pub fn capacity_csv(report: &CapacityReport) -> Result<String, AnalysisError> {
    let rows = report
        .rows
        .iter()
        .map(|r| {
            vec![r.task.to_string(), fmt_machine(r.p), fmt_machine(r.f), fmt_machine(r.n_eff), fmt_machine(r.relative_gain)]
        })
        .collect();
    csv_string(&["task", "p", "f", "n_eff", "relative_gain"], rows)
}

/// One row per (task, weighting): joint-law β, shared α and L∞, effective
/// fraction and, when bootstrapped, their standard deviations.
pub fn laws_csv(bundle: &LawBundle) -> Result<String, AnalysisError> {
    let sd = |u: Option<&crate::fitting::UncertaintyReport>, name: &str| {
        u.and_then(|u| u.std_dev(name)).map(fmt_machine).unwrap_or_default()
    };
    let mut rows = Vec::new();
    for (task, laws) in &bundle.tasks {
        let u = laws.uncertainty.as_ref();
        for (key, beta) in &laws.joint.betas {
            rows.push(vec![
                task.to_string(),
                key.to_string(),
                fmt_machine(*beta),
                sd(u, &format!("beta@{key}")),
                fmt_machine(laws.joint.alpha),
                sd(u, "alpha"),
                fmt_machine(laws.joint.l_inf),
                sd(u, "l_inf"),
                laws.effective_fractions.get(key).map(|f| fmt_machine(*f)).unwrap_or_default(),
                sd(u, &format!("f@{key}")),
            ]);
        }
    }
    csv_string(
        &["task", "p", "beta", "beta_sd", "alpha", "alpha_sd", "l_inf", "l_inf_sd", "f", "f_sd"],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn human_digits() {
        assert_eq!(fmt_human(0.30000001), "0.3000");
        assert_eq!(fmt_human(12.3456), "12.35");
        assert_eq!(fmt_human(1.0), "1.000");
        assert_eq!(fmt_human(149_953_024.0), "1.500e8");
        assert_eq!(fmt_human(-0.0001234), "-1.234e-4");
    }

    #[test]
    fn machine_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456789.123, -2.5e10] {
            assert_eq!(fmt_machine(x).parse::<f64>().unwrap(), x);
        }
    }
}
