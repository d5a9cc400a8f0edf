use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mixlaw_core::analysis::{analyze, frontier_csv, predict_frontier, AnalysisConfig, FormSelection};
use mixlaw_core::dataio::{bundle_to_bytes, ingest_strict, load_bundle, save_bundle, Format};
use mixlaw_core::fitting::FitConfig;
use mixlaw_core::lawcore::{eval_power_law, FractionCurve, FractionFit, ModelSize, TaskId};
use mixlaw_core::synthlab::GroundTruth;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

struct Outcome {
    code: u8,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = mixlaw_cli::run(std::iter::once("mixlaw").chain(args.iter().copied()), &mut out, &mut err);
    Outcome { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fit_fixture(dir: &Path, name: &str, seed: &str) -> (PathBuf, Outcome) {
    let out = dir.join(name);
    let o = run(&[
        "fit", "--input", s(&fixture("pairs.csv")), "--tasks", "en-de,en-fr", "--testset", "synthetic",
        "--metric", "loss", "--seed", seed, "--bootstrap", "20", "--out", s(&out),
    ]);
    (out, o)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).code, 0);
    assert_eq!(run(&["--version"]).code, 0);
    assert_eq!(run(&["fit", "--help"]).code, 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).code, 1);
    assert_eq!(run(&["bogus"]).code, 1);
    assert_eq!(run(&["fit", "--input", "x.csv"]).code, 1);
    let o = run(&["frontier", "--bundle", "b.json", "--n", "0"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("--n"));
    assert_eq!(run(&["frontier", "--bundle", "b.json", "--n", "1e8", "--grid", "0.5,1.0"]).code, 1);
}

#[test]
fn validate_outcomes() {
    let ok = run(&["validate", "--input", s(&fixture("pairs.csv"))]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert!(ok.stdout.contains("72 records"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        r#"{"run_id":"r1","model":{"n_noneb":1000000},"mixture":{"en-de":0.5,"en-fr":0.48},"training":{"steps":1000,"batch_tokens":500000},"evals":[]}
"#,
    )
    .unwrap();
    let o = run(&["validate", "--input", s(&bad)]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("line 1") && o.stderr.contains("mixture"), "{}", o.stderr);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = run(&["validate", "--input", s(&empty)]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("empty dataset"));

    assert_eq!(run(&["validate", "--input", s(&dir.path().join("missing.csv"))]).code, 2);
    assert_eq!(run(&["validate", "--input", s(&empty), "--format", "xml"]).code, 1);
}

#[test]
fn fit_writes_loadable_bundle_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (path, o) = fit_fixture(dir.path(), "b.json", "3");
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("en-de  alpha") && o.stdout.contains(" ± "));
    let bundle = load_bundle(&path).unwrap();
    let alpha = bundle.tasks[&TaskId::new("en-de").unwrap()].joint.alpha;
    assert!((alpha - 0.3).abs() / 0.3 < 0.02, "{alpha}");
}

#[test]
fn fit_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = fit_fixture(dir.path(), "a.json", "11");
    let (b, _) = fit_fixture(dir.path(), "b.json", "11");
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn fit_without_baseline_exits_three_naming_task() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("pairs.csv")).unwrap();
    // Drop every run in which en-fr is trained alone.
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains(",en-fr,1,"))
        .collect();
    let input = dir.path().join("nobase.csv");
    fs::write(&input, kept.join("\n") + "\n").unwrap();
    let o = run(&[
        "fit", "--input", s(&input), "--tasks", "en-de,en-fr", "--testset", "synthetic", "--metric", "loss",
        "--bootstrap", "0", "--out", s(&dir.path().join("b.json")),
    ]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stderr.contains("en-fr") && o.stderr.contains("p = 1"), "{}", o.stderr);
    assert!(!dir.path().join("b.json").exists());
}

#[test]
fn fit_then_frontier_matches_in_process_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (path, o) = fit_fixture(dir.path(), "b.json", "5");
    assert_eq!(o.code, 0);
    let csv_path = dir.path().join("f.csv");
    assert_eq!(run(&["frontier", "--bundle", s(&path), "--n", "3e8", "--out", s(&csv_path)]).code, 0);

    let text = fs::read_to_string(fixture("pairs.csv")).unwrap();
    let records = ingest_strict(text.as_bytes(), Format::Csv).unwrap();
    let tasks = [TaskId::new("en-de").unwrap(), TaskId::new("en-fr").unwrap()];
    let config = AnalysisConfig {
        fit: FitConfig { seed: 5, ..FitConfig::default() },
        bootstrap_replicates: 20,
        ..AnalysisConfig::default()
    };
    let bundle = analyze(&records, &tasks, "synthetic", "loss", &config).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bundle_to_bytes(&bundle).unwrap());
    let grid = mixlaw_core::analysis::default_frontier_grid();
    let curve = predict_frontier(&bundle, (&tasks[0], &tasks[1]), ModelSize::new(3e8).unwrap(), &grid, FormSelection::Auto).unwrap();
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), frontier_csv(&curve).unwrap());
}

#[test]
fn identity_bundle_frontier_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = fit_fixture(dir.path(), "b.json", "0");
    let mut bundle = load_bundle(&path).unwrap();
    for (task, laws) in bundle.tasks.iter_mut() {
        for rec in &mut laws.fractions {
            rec.fit = FractionFit::new(task.clone(), FractionCurve::identity()).unwrap();
        }
    }
    let ident = dir.path().join("ident.json");
    save_bundle(&bundle, &ident).unwrap();
    let o = run(&["frontier", "--bundle", s(&ident), "--n", "1e9", "--grid", "0.25,0.5,0.75"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let rows: Vec<Vec<f64>> = o
        .stdout
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let (de, fr) = (&bundle.tasks[&TaskId::new("en-de").unwrap()], &bundle.tasks[&TaskId::new("en-fr").unwrap()]);
    for row in rows {
        let p = row[0];
        assert_eq!(row[1], eval_power_law(&de.single_task, ModelSize::new(p * 1e9).unwrap()));
        assert_eq!(row[2], eval_power_law(&fr.single_task, ModelSize::new((1.0 - p) * 1e9).unwrap()));
    }
}

#[test]
fn frontier_json_and_task_selection() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = fit_fixture(dir.path(), "b.json", "0");
    let out = dir.path().join("f.json");
    let o = run(&["frontier", "--bundle", s(&path), "--n", "1e9", "--tasks", "en-fr,en-de", "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["first"], "en-fr");
    assert_eq!(v["grid"].as_array().unwrap().len(), 37);
    assert_eq!(run(&["frontier", "--bundle", s(&path), "--n", "1e9", "--tasks", "en-fr,en-ja"]).code, 2);
    assert_eq!(run(&["frontier", "--bundle", s(&dir.path().join("none.json")), "--n", "1e9"]).code, 2);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run_bin = |out: &Path, env_seed: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mixlaw"));
        cmd.args(["fit", "--input", s(&fixture("pairs.csv")), "--tasks", "en-de,en-fr", "--testset", "synthetic"])
            .args(["--metric", "loss", "--bootstrap", "5", "--out", s(out)]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        cmd.env_remove("MIXLAW_SEED");
        if let Some(e) = env_seed {
            cmd.env("MIXLAW_SEED", e);
        }
        assert!(cmd.status().unwrap().success());
        load_bundle(out).unwrap().provenance.config["fit"]["seed"].as_u64().unwrap()
    };
    assert_eq!(run_bin(&dir.path().join("a.json"), Some("42"), None), 42);
    assert_eq!(run_bin(&dir.path().join("b.json"), Some("42"), Some("9")), 9);
    assert_eq!(run_bin(&dir.path().join("c.json"), None, None), 0);
}

#[test]
fn simulate_neff_report_correlate_correct() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.jsonl");
    let o = run(&["simulate", "--truth", s(&fixture("truth.json")), "--out", s(&data), "--seed", "7"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    // JSON-lines and the CSV fixture carry the same records.
    let a = ingest_strict(fs::read(&data).unwrap().as_slice(), Format::JsonLines).unwrap();
    let b = ingest_strict(fs::read(fixture("pairs.csv")).unwrap().as_slice(), Format::Csv).unwrap();
    assert_eq!(a, b);
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(fixture("truth.json")).unwrap()).unwrap();
    assert_eq!(truth.tasks.len(), 2);

    let (bundle, _) = fit_fixture(dir.path(), "b.json", "0");
    let o = run(&["neff", "--bundle", s(&bundle), "--n", "1e9"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.starts_with("task,p,f,n_eff,relative_gain\n"));
    assert_eq!(o.stdout.lines().count(), 17);

    let rep = dir.path().join("report");
    let o = run(&["report", "--bundle", s(&bundle), "--out-dir", s(&rep)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for f in ["laws.csv", "capacity.csv", "scaling_en-de.json", "fraction_en-fr.json", "frontier_plot.json"] {
        assert!(rep.join(f).exists(), "{f}");
    }

    let curve = dir.path().join("curve.csv");
    let mut text = String::from("step,value\n");
    for i in 0..12 {
        let step = (1e4 * 50f64.powf(i as f64 / 11.0)).round();
        text.push_str(&format!("{step},{}\n", 3.0 * step.powf(-0.2) + 1.5));
    }
    fs::write(&curve, text).unwrap();
    let o = run(&["correct", "--input", s(&curve)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let value: f64 = o.stdout.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let want = 3.0 * 2.5e6f64.powf(-0.2) + 1.5;
    assert!((value - want).abs() / want < 1e-4);
    fs::write(&curve, "step,value\n10,1.0\n20,0.9\n").unwrap();
    assert_eq!(run(&["correct", "--input", s(&curve)]).code, 3);

    let o = run(&["correlate", "--input", s(&fixture("pairs.csv")), "--task", "en-de", "--testset", "synthetic", "--quality-metric", "bleu"]);
    assert_eq!(o.code, 2);
}
