use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::records::{EvalRecord, FieldViolation, ModelSpec, RunRecord, TrainingSpec};
use super::DataError;
use crate::lawcore::{TaskId, WeightVector};

/// Task weights of the default experiment grid; other weights are accepted
/// with a note.
pub const DEFAULT_WEIGHT_GRID: [f64; 9] = [0.0, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    /// Guesses from the file extension: `.csv`, else JSON-lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::JsonLines,
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::JsonLines => "json_lines",
        })
    }
}

impl FromStr for Format {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "csv" => Ok(Format::Csv),
            "json_lines" | "jsonl" | "ndjson" => Ok(Format::JsonLines),
            other => Err(DataError::UnknownFormat(other.to_string())),
        }
    }
}

/// One rejected record (or unattributable row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub run_id: Option<String>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(run) = &self.run_id {
            write!(f, ", run `{run}`")?;
        }
        if let Some(field) = &self.field {
            write!(f, ", field `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Outcome of ingesting one source. Every input unit (JSON line, or CSV run
/// group) ends up either in `records` or in `errors`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub records: Vec<RunRecord>,
    pub errors: Vec<RecordError>,
    pub notes: Vec<String>,
    pub records_in: usize,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn ingest_path(path: &Path, format: Format) -> Result<IngestReport, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    ingest(file, format)
}

/// Parses and validates, collecting per-record errors rather than stopping
/// at the first.
pub fn ingest<R: Read>(reader: R, format: Format) -> Result<IngestReport, DataError> {
    let mut report = match format {
        Format::JsonLines => ingest_json_lines(reader)?,
        Format::Csv => ingest_csv(reader)?,
    };
    for r in &report.records {
        for (task, w) in r.mixture.iter() {
            if !DEFAULT_WEIGHT_GRID.iter().any(|g| (g - w).abs() <= 1e-9) {
                report
                    .notes
                    .push(format!("run `{}`: weight {w} of `{task}` is off the default grid", r.run_id));
            }
        }
    }
    Ok(report)
}

/// Like [`ingest`] but fails on the first error or on an empty dataset.
pub fn ingest_strict<R: Read>(reader: R, format: Format) -> Result<Vec<RunRecord>, DataError> {
    let report = ingest(reader, format)?;
    if let Some(e) = report.errors.into_iter().next() {
        return Err(DataError::Record(e));
    }
    if report.records.is_empty() {
        return Err(DataError::EmptyDataset("no records in input".into()));
    }
    Ok(report.records)
}

fn finish(record: RunRecord) -> Result<RunRecord, FieldViolation> {
    let record = record.canonicalize()?;
    record.validate()?;
    Ok(record)
}

fn ingest_json_lines<R: Read>(reader: R) -> Result<IngestReport, DataError> {
    let mut report = IngestReport::default();
    let mut seen_ids = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records_in += 1;
        let de = &mut serde_json::Deserializer::from_str(&line);
        let record: RunRecord = match serde_path_to_error::deserialize(de) {
            Ok(r) => r,
            Err(e) => {
                let path = e.path().to_string();
                report.errors.push(RecordError {
                    line: line_no,
                    run_id: None,
                    field: (path != ".").then_some(path),
                    message: e.into_inner().to_string(),
                });
                continue;
            }
        };
        let run_id = record.run_id.clone();
        if !seen_ids.insert(run_id.clone()) {
            report.errors.push(RecordError {
                line: line_no,
                run_id: Some(run_id),
                field: Some("run_id".into()),
                message: "duplicate run_id".into(),
            });
            continue;
        }
        match finish(record) {
            Ok(r) => report.records.push(r),
            Err(v) => report.errors.push(RecordError {
                line: line_no,
                run_id: Some(run_id),
                field: Some(v.field),
                message: v.message,
            }),
        }
    }
    Ok(report)
}

const CSV_COLUMNS: [&str; 11] = [
    "run_id", "n_noneb", "n_total", "steps", "batch_tokens", "task", "weight", "testset", "metric",
    "value", "at_step",
];
const CSV_ARCH_COLUMNS: [&str; 7] =
    ["enc_layers", "dec_layers", "emb_dim", "n_heads", "head_dim", "mlp_dim", "vocab_size"];

/// Rows of one run, accumulated before validation.
struct RunGroup {
    first_line: usize,
    model: ModelSpec,
    training: TrainingSpec,
    weights: BTreeMap<TaskId, f64>,
    evals: Vec<EvalRecord>,
    error: Option<RecordError>,
}

struct CsvRow<'a> {
    record: &'a csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl CsvRow<'_> {
    fn raw(&self, name: &str) -> &str {
        self.columns
            .get(name)
            .and_then(|&i| self.record.get(i))
            .map(str::trim)
            .unwrap_or("")
    }

    fn parse<T: FromStr>(&self, name: &str) -> Result<T, FieldViolation>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(name);
        raw.parse()
            .map_err(|e| FieldViolation { field: name.into(), message: format!("`{raw}`: {e}") })
    }

    fn optional<T: FromStr>(&self, name: &str) -> Result<Option<T>, FieldViolation>
    where
        T::Err: fmt::Display,
    {
        if self.raw(name).is_empty() {
            Ok(None)
        } else {
            self.parse(name).map(Some)
        }
    }

    /// Rows with no eval columns only declare a mixture entry.
    fn is_mixture_only(&self) -> bool {
        ["testset", "metric", "value", "at_step"].iter().all(|c| self.raw(c).is_empty())
    }
}

fn ingest_csv<R: Read>(reader: R) -> Result<IngestReport, DataError> {
    let mut report = IngestReport::default();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?.clone();
    let columns: HashMap<String, usize> =
        headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(report);
    }
    for c in CSV_COLUMNS {
        if !columns.contains_key(c) {
            return Err(DataError::Parse { line: 1, message: format!("missing CSV column `{c}`") });
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, RunGroup> = HashMap::new();
    for row in rdr.records() {
        let record = match row {
            Ok(r) => r,
            Err(e) => {
                report.records_in += 1;
                let line = e.position().map_or(0, |p| p.line() as usize);
                report.errors.push(RecordError { line, run_id: None, field: None, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            report.records_in += 1;
            report.errors.push(RecordError {
                line,
                run_id: None,
                field: None,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
            continue;
        }
        let row = CsvRow { record: &record, columns: &columns };
        let run_id = row.raw("run_id").to_string();
        if run_id.is_empty() {
            report.records_in += 1;
            report.errors.push(RecordError {
                line,
                run_id: None,
                field: Some("run_id".into()),
                message: "must be non-empty".into(),
            });
            continue;
        }
        if !groups.contains_key(&run_id) {
            order.push(run_id.clone());
            let group = match run_header(&row) {
                Ok((model, training)) => RunGroup {
                    first_line: line,
                    model,
                    training,
                    weights: BTreeMap::new(),
                    evals: Vec::new(),
                    error: None,
                },
                Err(v) => RunGroup {
                    first_line: line,
                    model: ModelSpec::with_noneb(0),
                    training: TrainingSpec { steps: 0, batch_tokens: 0 },
                    weights: BTreeMap::new(),
                    evals: Vec::new(),
                    error: Some(RecordError {
                        line,
                        run_id: Some(run_id.clone()),
                        field: Some(v.field),
                        message: v.message,
                    }),
                },
            };
            groups.insert(run_id.clone(), group);
        }
        let group = groups.get_mut(&run_id).expect("inserted above");
        if group.error.is_some() {
            continue;
        }
        if let Err(v) = add_row(group, &row) {
            group.error = Some(RecordError {
                line,
                run_id: Some(run_id),
                field: Some(v.field),
                message: v.message,
            });
        }
    }

    for run_id in order {
        report.records_in += 1;
        let g = groups.remove(&run_id).expect("grouped");
        if let Some(e) = g.error {
            report.errors.push(e);
            continue;
        }
        let record = RunRecord {
            run_id: run_id.clone(),
            model: g.model,
            mixture: WeightVector::unchecked(g.weights),
            training: g.training,
            evals: g.evals,
        };
        match finish(record) {
            Ok(r) => report.records.push(r),
            Err(v) => report.errors.push(RecordError {
                line: g.first_line,
                run_id: Some(run_id),
                field: Some(v.field),
                message: v.message,
            }),
        }
    }
    Ok(report)
}

fn run_header(row: &CsvRow<'_>) -> Result<(ModelSpec, TrainingSpec), FieldViolation> {
    let mut model = ModelSpec::with_noneb(row.parse("n_noneb")?);
    model.n_total = row.optional("n_total")?;
    model.enc_layers = row.optional("enc_layers")?;
    model.dec_layers = row.optional("dec_layers")?;
    model.emb_dim = row.optional("emb_dim")?;
    model.n_heads = row.optional("n_heads")?;
    model.head_dim = row.optional("head_dim")?;
    model.mlp_dim = row.optional("mlp_dim")?;
    model.vocab_size = row.optional("vocab_size")?;
    let training = TrainingSpec { steps: row.parse("steps")?, batch_tokens: row.parse("batch_tokens")? };
    Ok((model, training))
}

fn add_row(group: &mut RunGroup, row: &CsvRow<'_>) -> Result<(), FieldViolation> {
    let (model, training) = run_header(row)?;
    if model != group.model {
        return Err(FieldViolation {
            field: "n_noneb".into(),
            message: "model columns differ from the run's first row".into(),
        });
    }
    if training != group.training {
        return Err(FieldViolation {
            field: "steps".into(),
            message: "training columns differ from the run's first row".into(),
        });
    }
    let task: TaskId = row.parse("task")?;
    let weight: f64 = row.parse("weight")?;
    match group.weights.get(&task) {
        Some(&w) if w != weight => {
            return Err(FieldViolation {
                field: "weight".into(),
                message: format!("`{task}` has weight {weight} here and {w} earlier in the run"),
            })
        }
        _ => {
            group.weights.insert(task.clone(), weight);
        }
    }
    if row.is_mixture_only() {
        return Ok(());
    }
    group.evals.push(EvalRecord {
        task,
        testset: row.raw("testset").to_string(),
        metric: row.raw("metric").to_string(),
        value: row.parse("value")?,
        at_step: row.parse("at_step")?,
        zero_shot: weight == 0.0,
    });
    Ok(())
}

pub fn write_json_lines<W: Write>(records: &[RunRecord], mut out: W) -> Result<(), DataError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| DataError::Serialize(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| DataError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Writes the flat CSV form: one row per eval, plus one eval-less row for
/// each mixture task without evals. Architecture columns are added only when
/// some record carries them.
pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<(), DataError> {
    let with_arch = records
        .iter()
        .any(|r| r.model.architecture().iter().any(|(_, v)| v.is_some()));
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if with_arch {
        header.extend(CSV_ARCH_COLUMNS);
    }
    let err = |e: csv::Error| DataError::Io(e.to_string());
    w.write_record(&header).map_err(err)?;
    for r in records {
        let base = |task: &TaskId| -> Vec<String> {
            vec![
                r.run_id.clone(),
                r.model.n_noneb.to_string(),
                r.model.n_total.map(|v| v.to_string()).unwrap_or_default(),
                r.training.steps.to_string(),
                r.training.batch_tokens.to_string(),
                task.to_string(),
                r.weight_of(task).to_string(),
            ]
        };
        let arch: Vec<String> = r
            .model
            .architecture()
            .iter()
            .map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        let mut evaluated = HashSet::new();
        for e in &r.evals {
            evaluated.insert(&e.task);
            let mut row = base(&e.task);
            row.extend([
                e.testset.clone(),
                e.metric.clone(),
                e.value.to_string(),
                e.at_step.to_string(),
            ]);
            if with_arch {
                row.extend(arch.iter().cloned());
            }
            w.write_record(&row).map_err(err)?;
        }
        for task in r.mixture.tasks() {
            if evaluated.contains(task) {
                continue;
            }
            let mut row = base(task);
            row.extend([String::new(), String::new(), String::new(), String::new()]);
            if with_arch {
                row.extend(arch.iter().cloned());
            }
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINES: &str = r#"{"run_id":"a","model":{"n_noneb":1000,"n_total":5000},"mixture":{"en-de":0.5,"en-fr":0.5},"training":{"steps":500000,"batch_tokens":500000},"evals":[{"task":"en-de","testset":"wmt","metric":"loss","value":2.5,"at_step":500000}]}
{"run_id":"b","model":{"n_noneb":2000},"mixture":{"en-de":1.0},"training":{"steps":500000,"batch_tokens":500000},"evals":[{"task":"en-de","testset":"wmt","metric":"loss","value":2.1,"at_step":500000},{"task":"en-fr","testset":"wmt","metric":"loss","value":6.0,"at_step":500000,"zero_shot":true}]}
{"run_id":"c","model":{"n_noneb":3000,"enc_layers":2},"mixture":{"en-de":0.25,"en-fr":0.75},"training":{"steps":1000000,"batch_tokens":500000},"evals":[]}
"#;

    #[test]
    fn three_line_file() {
        let report = ingest(LINES.as_bytes(), Format::JsonLines).unwrap();
        assert!(report.is_clean(), "{:?}", report.errors);
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.records_in, 3);
        assert_eq!(report.notes.len(), 2, "{:?}", report.notes);
    }

    #[test]
    fn weight_sum_violation_names_field() {
        let bad = LINES.lines().next().unwrap().replace("\"en-fr\":0.5", "\"en-fr\":0.48");
        let report = ingest(bad.as_bytes(), Format::JsonLines).unwrap();
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].field.as_deref(), Some("mixture"));
        assert_eq!(report.errors[0].line, 1);
        assert!(report.errors[0].message.contains("0.98"));
    }

    #[test]
    fn parse_error_reports_path_and_line() {
        let text = format!("{}\n\n{{\"run_id\":\"z\",\"model\":{{\"n_noneb\":\"x\"}}}}\n", LINES.lines().next().unwrap());
        let report = ingest(text.as_bytes(), Format::JsonLines).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.errors[0].line, 3);
        assert_eq!(report.errors[0].field.as_deref(), Some("model.n_noneb"));
        assert_eq!(report.records_in, report.records.len() + report.errors.len());
    }

    #[test]
    fn duplicate_run_id() {
        let first = LINES.lines().next().unwrap();
        let text = format!("{first}\n{first}\n");
        let report = ingest(text.as_bytes(), Format::JsonLines).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.errors[0].field.as_deref(), Some("run_id"));
    }

    #[test]
    fn csv_and_json_lines_agree() {
        let records = ingest_strict(LINES.as_bytes(), Format::JsonLines).unwrap();
        let mut csv_bytes = Vec::new();
        write_csv(&records, &mut csv_bytes).unwrap();
        let from_csv = ingest_strict(csv_bytes.as_slice(), Format::Csv).unwrap();
        assert_eq!(from_csv, records);
        let mut jl = Vec::new();
        write_json_lines(&from_csv, &mut jl).unwrap();
        assert_eq!(ingest_strict(jl.as_slice(), Format::JsonLines).unwrap(), records);
    }

    #[test]
    fn csv_inconsistent_weight() {
        let text = "run_id,n_noneb,n_total,steps,batch_tokens,task,weight,testset,metric,value,at_step\n\
                    r,10,,100,100,en-de,0.5,wmt,loss,2.0,100\n\
                    r,10,,100,100,en-de,0.4,wmt,bleu,20,100\n\
                    r,10,,100,100,en-fr,0.5,wmt,loss,2.0,100\n";
        let report = ingest(text.as_bytes(), Format::Csv).unwrap();
        assert_eq!(report.records.len(), 0);
        assert_eq!(report.errors[0].line, 3);
        assert_eq!(report.errors[0].field.as_deref(), Some("weight"));
    }

    #[test]
    fn csv_duplicate_eval() {
        let text = "run_id,n_noneb,n_total,steps,batch_tokens,task,weight,testset,metric,value,at_step\n\
                    r,10,,100,100,en-de,1,wmt,loss,2.0,100\n\
                    r,10,,100,100,en-de,1,wmt,loss,2.1,100\n";
        let report = ingest(text.as_bytes(), Format::Csv).unwrap();
        assert!(report.errors[0].message.contains("duplicate"));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(ingest_strict("".as_bytes(), Format::JsonLines), Err(DataError::EmptyDataset(_))));
        assert!(matches!(ingest_strict("".as_bytes(), Format::Csv), Err(DataError::EmptyDataset(_))));
    }

    #[test]
    fn format_names() {
        assert_eq!("jsonl".parse::<Format>().unwrap(), Format::JsonLines);
        assert_eq!("json-lines".parse::<Format>().unwrap(), Format::JsonLines);
        assert_eq!(Format::from_path(Path::new("x.CSV")), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }
}
