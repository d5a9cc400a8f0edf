use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use mixlaw_core::analysis::{
    analyze, bundle_pair, capacity_csv, capacity_report, correlation_plot, default_frontier_grid,
    fmt_human, fmt_machine, fraction_plot, frontier_csv, frontier_plot, laws_csv,
    metric_loss_correlation, predict_frontier, scaling_plot, AnalysisConfig, FormSelection,
};
use mixlaw_core::dataio::{
    ingest_path, ingest_strict, load_bundle, save_bundle, write_atomic, write_csv,
    write_json_lines, Format, LawBundle, RunRecord,
};
use mixlaw_core::fitting::{convergence_correct, CurvePoint, FitConfig};
use mixlaw_core::synthlab::{generate_dataset, pair_weightings, GroundTruth};
use mixlaw_core::{ModelSize, TaskId};

use crate::{
    CliError, Command, CorrectArgs, CorrelateArgs, FitArgs, FrontierArgs, NeffArgs, ReportArgs,
    ServeArgs, SimulateArgs, ValidateArgs,
};

type Out<'a> = &'a mut dyn Write;

pub(crate) fn dispatch(command: Command, out: Out, err: Out) -> Result<(), CliError> {
    match command {
        Command::Validate(a) => validate(a, out, err),
        Command::Simulate(a) => simulate(a, out),
        Command::Fit(a) => fit(a, out, err),
        Command::Frontier(a) => frontier(a, out),
        Command::Neff(a) => neff(a, out),
        Command::Correct(a) => correct(a, out, err),
        Command::Correlate(a) => correlate(a, out),
        Command::Report(a) => report(a, out),
        Command::Serve(a) => serve(a, err),
    }
}

fn format_for(path: &Path, flag: Option<&str>) -> Result<Format, CliError> {
    match flag {
        Some(f) => f.parse().map_err(|e: mixlaw_core::dataio::DataError| CliError::Usage(e.to_string())),
        None => Ok(Format::from_path(path)),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn ensure_nonempty(path: &Path, text: &str) -> Result<(), CliError> {
    if text.trim().is_empty() {
        Err(CliError::Data(format!("empty dataset: {} has no records", path.display())))
    } else {
        Ok(())
    }
}

fn load_records(path: &Path) -> Result<Vec<RunRecord>, CliError> {
    let text = read_text(path)?;
    ensure_nonempty(path, &text)?;
    Ok(ingest_strict(text.as_bytes(), Format::from_path(path))?)
}

fn task_id(name: &str) -> Result<TaskId, CliError> {
    name.trim().parse().map_err(|e| CliError::Usage(format!("bad task name `{name}`: {e}")))
}

fn bundle_task(bundle: &LawBundle, name: &str) -> Result<TaskId, CliError> {
    bundle
        .find_task(name.trim())
        .map(|(t, _)| t.clone())
        .ok_or_else(|| CliError::Data(format!("task `{name}` is not in the bundle")))
}

fn emit(out: Out, path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn validate(a: ValidateArgs, out: Out, err: Out) -> Result<(), CliError> {
    let format = format_for(&a.input, a.format.as_deref())?;
    let text = read_text(&a.input)?;
    ensure_nonempty(&a.input, &text)?;
    let report = ingest_path(&a.input, format)?;
    for e in &report.errors {
        writeln!(err, "{e}")?;
    }
    for note in &report.notes {
        writeln!(err, "note: {note}")?;
    }
    if !report.errors.is_empty() {
        return Err(CliError::Data(format!(
            "{} of {} records invalid",
            report.errors.len(),
            report.records_in
        )));
    }
    if report.records.is_empty() {
        return Err(CliError::Data(format!("empty dataset: {} has no records", a.input.display())));
    }
    writeln!(out, "ok: {} records", report.records.len())?;
    Ok(())
}

fn simulate(a: SimulateArgs, out: Out) -> Result<(), CliError> {
    let text = read_text(&a.truth)?;
    let mut truth: GroundTruth =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("ground truth: {e}")))?;
    if let Some(seed) = a.seed {
        truth.seed = seed;
    }
    let tasks: Vec<TaskId> = truth.tasks.keys().cloned().collect();
    let [first, second] = tasks.as_slice() else {
        return Err(CliError::Data(format!("ground truth must hold exactly two tasks, found {}", tasks.len())));
    };
    let sizes = a.sizes.0.iter().map(|&n| ModelSize::new(n)).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Usage(e.to_string()))?;
    let weightings = pair_weightings(first, second, &a.grid.0).map_err(|e| CliError::Data(e.to_string()))?;
    let records = generate_dataset(&truth, &sizes, &weightings).map_err(|e| CliError::Data(e.to_string()))?;
    let mut bytes = Vec::new();
    match Format::from_path(&a.out) {
        Format::Csv => write_csv(&records, &mut bytes)?,
        Format::JsonLines => write_json_lines(&records, &mut bytes)?,
    }
    write_atomic(&a.out, &bytes)?;
    writeln!(out, "wrote {} records to {}", records.len(), a.out.display())?;
    Ok(())
}

fn fit(a: FitArgs, out: Out, err: Out) -> Result<(), CliError> {
    let records = load_records(&a.input)?;
    let tasks = a.tasks.iter().map(|t| task_id(t)).collect::<Result<Vec<_>, _>>()?;
    let config = AnalysisConfig {
        direction: a.direction.into(),
        fit: FitConfig { seed: a.seed, ..FitConfig::default() },
        bootstrap_replicates: a.bootstrap,
        ..AnalysisConfig::default()
    };
    let bundle = analyze(&records, &tasks, &a.testset, &a.metric, &config)?;
    save_bundle(&bundle, &a.out)?;
    write_summary(&bundle, out)?;
    writeln!(err, "bundle written to {}", a.out.display())?;
    Ok(())
}

fn pm(value: f64, sd: Option<f64>) -> String {
    match sd {
        Some(s) => format!("{} ± {}", fmt_human(value), fmt_human(s)),
        None => fmt_human(value),
    }
}

fn write_summary(bundle: &LawBundle, out: Out) -> Result<(), CliError> {
    for (task, laws) in &bundle.tasks {
        let u = laws.uncertainty.as_ref();
        let sd = |name: &str| u.and_then(|u| u.std_dev(name));
        writeln!(
            out,
            "{task}  alpha {}  l_inf {}",
            pm(laws.joint.alpha, sd("alpha")),
            pm(laws.joint.l_inf, sd("l_inf"))
        )?;
        writeln!(out, "  {:<8}  {:<24}  {:<24}", "p", "beta", "f")?;
        for (key, beta) in &laws.joint.betas {
            let f = laws
                .effective_fractions
                .get(key)
                .map(|f| pm(*f, sd(&format!("f@{key}"))))
                .unwrap_or_default();
            writeln!(out, "  {:<8}  {:<24}  {:<24}", fmt_human(key.value()), pm(*beta, sd(&format!("beta@{key}"))), f)?;
        }
        if let Some(fit) = laws.preferred_fraction() {
            writeln!(out, "  fraction curve: {}", fit.form())?;
        }
    }
    Ok(())
}

fn frontier(a: FrontierArgs, out: Out) -> Result<(), CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let (first, second) = match &a.tasks {
        Some(t) => (bundle_task(&bundle, &t.0)?, bundle_task(&bundle, &t.1)?),
        None => bundle_pair(&bundle)?,
    };
    let grid = a.grid.map(|g| g.0).unwrap_or_else(default_frontier_grid);
    let n = ModelSize::new(a.n).map_err(|e| CliError::Usage(e.to_string()))?;
    let curve = predict_frontier(&bundle, (&first, &second), n, &grid, FormSelection::Auto)?;
    let is_json = a.out.as_ref().and_then(|p| p.extension()).is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let text = if is_json { to_json(&curve)? } else { frontier_csv(&curve)? };
    emit(out, a.out.as_deref(), &text)
}

fn neff(a: NeffArgs, out: Out) -> Result<(), CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let n = ModelSize::new(a.n).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = capacity_csv(&capacity_report(&bundle, n))?;
    emit(out, a.out.as_deref(), &text)
}

#[derive(Deserialize)]
struct CurveRow {
    step: u64,
    value: f64,
}

fn correct(a: CorrectArgs, out: Out, err: Out) -> Result<(), CliError> {
    let file = File::open(&a.input).map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.input.display())))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut curve = Vec::new();
    for (i, row) in reader.deserialize::<CurveRow>().enumerate() {
        let row = row.map_err(|e| CliError::Data(format!("line {}: {e}", i + 2)))?;
        curve.push(CurvePoint::new(row.step, row.value));
    }
    if curve.is_empty() {
        return Err(CliError::Data(format!("empty dataset: {} has no curve points", a.input.display())));
    }
    let config = FitConfig { seed: a.seed, ..FitConfig::default() };
    let corrected = convergence_correct(&curve, a.target_step, a.direction.into(), &config)
        .map_err(|e| CliError::Fit(e.to_string()))?;
    writeln!(out, "target_step,value,b,a,c")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        corrected.target_step,
        fmt_machine(corrected.value),
        fmt_machine(corrected.curve.beta),
        fmt_machine(corrected.curve.alpha),
        fmt_machine(corrected.curve.l_inf)
    )?;
    if corrected.extrapolation_warning {
        writeln!(err, "warning: target step is more than 10x the last observed step")?;
    }
    Ok(())
}

fn correlate(a: CorrelateArgs, out: Out) -> Result<(), CliError> {
    let records = load_records(&a.input)?;
    let task = task_id(&a.task)?;
    let (pairs, fit) = metric_loss_correlation(&records, &task, &a.loss_metric, &a.quality_metric, &a.testset)?;
    writeln!(out, "n_pairs,pearson_r,slope,intercept")?;
    writeln!(
        out,
        "{},{},{},{}",
        fit.n_pairs,
        fit.pearson_r.map(fmt_machine).unwrap_or_default(),
        fmt_machine(fit.slope),
        fmt_machine(fit.intercept)
    )?;
    if let Some(path) = &a.out {
        write_atomic(path, to_json(&correlation_plot(&pairs, &fit))?.as_bytes())?;
    }
    Ok(())
}

fn file_stem(task: &TaskId) -> String {
    task.to_string().chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn report(a: ReportArgs, out: Out) -> Result<(), CliError> {
    let bundle = load_bundle(&a.bundle)?;
    fs::create_dir_all(&a.out_dir)?;
    let sizes = a.sizes.0.iter().map(|&n| ModelSize::new(n)).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut files: Vec<(String, String)> = vec![("laws.csv".into(), laws_csv(&bundle)?)];
    if let Some(&largest) = sizes.last() {
        files.push(("capacity.csv".into(), capacity_csv(&capacity_report(&bundle, largest))?));
    }
    for task in bundle.tasks.keys() {
        let stem = file_stem(task);
        files.push((format!("scaling_{stem}.json"), to_json(&scaling_plot(&bundle, task)?)?));
        files.push((format!("fraction_{stem}.json"), to_json(&fraction_plot(&bundle, task)?)?));
    }
    if let Ok((first, second)) = bundle_pair(&bundle) {
        let grid = default_frontier_grid();
        for n in &sizes {
            let curve = predict_frontier(&bundle, (&first, &second), *n, &grid, FormSelection::Auto)?;
            files.push((format!("frontier_n{}.csv", n.get()), frontier_csv(&curve)?));
        }
        let plot = frontier_plot(&bundle, (&first, &second), &sizes, &grid, FormSelection::Auto)?;
        files.push(("frontier_plot.json".into(), to_json(&plot)?));
    }
    for (name, text) in files {
        let path = a.out_dir.join(&name);
        write_atomic(&path, text.as_bytes())?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}

fn serve(a: ServeArgs, err: Out) -> Result<(), CliError> {
    let bundle = load_bundle(&a.bundle)?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("static directory {} does not exist", dir.display())));
        }
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", a.port))
            .await
            .map_err(|e| CliError::Data(format!("cannot bind port {}: {e}", a.port)))?;
        writeln!(err, "serving {} on http://127.0.0.1:{}", a.bundle.display(), a.port)?;
        let app = crate::server::router(bundle, a.static_dir.as_deref())?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Data(format!("server error: {e}")))
    })
}
