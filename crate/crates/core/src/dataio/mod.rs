//! Experiment records, the reference size table, fit datasets and the
//! persisted law bundle.

mod bundle;
mod dataset;
mod ingest;
mod records;
mod sizetable;

use thiserror::Error;

use crate::fitting::FitError;
use crate::lawcore::TaskId;

pub use bundle::{
    bundle_from_bytes, bundle_to_bytes, canonical_json, dataset_hash, load_bundle,
    load_bundle_expecting, save_bundle, write_atomic, FractionFitRecord, LawBundle, Provenance,
    TaskLaws, WeightingFit, SCHEMA_VERSION,
};
pub use dataset::{build_fit_dataset, CorrectionPolicy, DataPoint};
pub use ingest::{
    ingest, ingest_path, ingest_strict, write_csv, write_json_lines, Format, IngestReport,
    RecordError, DEFAULT_WEIGHT_GRID,
};
pub use records::{EvalRecord, FieldViolation, ModelSpec, RunRecord, TrainingSpec};
pub use sizetable::{lookup, reference_size_table, ArchQuery, SizeTableRow};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid record: {0}")]
    Record(RecordError),
    #[error("unknown format `{0}` (expected csv or json_lines)")]
    UnknownFormat(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("no `{metric}` evals on `{testset}` for task `{task}`")]
    MissingMetric {
        task: TaskId,
        testset: String,
        metric: String,
    },
    #[error("convergence correction of run `{run_id}`, task `{task}` failed: {source}")]
    Correction {
        run_id: String,
        task: TaskId,
        source: FitError,
    },
    #[error("task `{0}` is not in the bundle")]
    UnknownTask(TaskId),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("bundle schema version {found} does not match the expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt bundle: {0}")]
    Corruption(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}
