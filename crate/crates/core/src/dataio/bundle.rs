use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::records::RunRecord;
use super::DataError;
use crate::fitting::{FitDiagnostics, UncertaintyReport, WeightedPoint};
use crate::lawcore::{FractionFit, FractionForm, JointLaw, MetricDirection, PowerLawParams, TaskId, WeightKey};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingFit {
    pub params: PowerLawParams,
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionFitRecord {
    pub fit: FractionFit,
    pub diagnostics: FitDiagnostics,
}

/// Everything fitted for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLaws {
    pub joint: JointLaw,
    pub joint_diagnostics: FitDiagnostics,
    /// The p = 1 law extracted from the joint fit.
    pub single_task: PowerLawParams,
    /// Independent three-parameter fits, one per weighting with enough sizes.
    #[serde(default)]
    pub per_weighting: BTreeMap<WeightKey, WeightingFit>,
    pub effective_fractions: BTreeMap<WeightKey, f64>,
    #[serde(default)]
    pub fractions: Vec<FractionFitRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyReport>,
    #[serde(default)]
    pub observations: Vec<WeightedPoint>,
}

impl TaskLaws {
    pub fn fraction(&self, form: FractionForm) -> Option<&FractionFit> {
        self.fractions.iter().map(|r| &r.fit).find(|f| f.form() == form)
    }

    /// The flexible fit when present, else the linear one.
    pub fn preferred_fraction(&self) -> Option<&FractionFit> {
        self.fraction(FractionForm::Flexible).or_else(|| self.fraction(FractionForm::Linear))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_hash: String,
    pub config: Value,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawBundle {
    pub schema_version: u32,
    pub metric: String,
    pub direction: MetricDirection,
    pub testset: String,
    pub tasks: BTreeMap<TaskId, TaskLaws>,
    pub provenance: Provenance,
}

impl LawBundle {
    pub fn task(&self, task: &TaskId) -> Result<&TaskLaws, DataError> {
        self.tasks.get(task).ok_or_else(|| DataError::UnknownTask(task.clone()))
    }

    /// Looks a task up by its display form (`name` or `name@tag`), falling
    /// back to the bare name.
    pub fn find_task(&self, name: &str) -> Option<(&TaskId, &TaskLaws)> {
        self.tasks
            .iter()
            .find(|(t, _)| t.to_string() == name)
            .or_else(|| self.tasks.iter().find(|(t, _)| t.name() == name))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |m: String| DataError::InvalidBundle(m);
        for (task, laws) in &self.tasks {
            if &laws.joint.task != task {
                return Err(invalid(format!("joint law under `{task}` belongs to `{}`", laws.joint.task)));
            }
            laws.joint.validate().map_err(|e| invalid(format!("`{task}`: {e}")))?;
            if laws.joint.direction != self.direction {
                return Err(invalid(format!("`{task}`: law direction differs from bundle")));
            }
            laws.single_task
                .validate(self.direction)
                .map_err(|e| invalid(format!("`{task}` single-task law: {e}")))?;
            for rec in &laws.fractions {
                if &rec.fit.task != task {
                    return Err(invalid(format!("fraction fit under `{task}` belongs to `{}`", rec.fit.task)));
                }
                rec.fit.curve.validate().map_err(|e| invalid(format!("`{task}`: {e}")))?;
                if laws.joint.baseline_beta().is_err() {
                    return Err(invalid(format!("`{task}` has a fraction fit but no p = 1 beta")));
                }
            }
        }
        let value = serde_json::to_value(&self.tasks).map_err(|e| DataError::Serialize(e.to_string()))?;
        if let Some(path) = non_finite_path(&value, String::from("tasks")) {
            return Err(invalid(format!("bundle contains a non-finite number at {path}")));
        }
        Ok(())
    }
}

/// serde_json turns NaN and infinities into `null`. Fitted values hold no
/// nulls otherwise (absent options are skipped).
/// Non-finite floats serialize as null; returns the path of the first one.
fn non_finite_path(v: &Value, at: String) -> Option<String> {
    match v {
        Value::Null => Some(at),
        Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| non_finite_path(x, format!("{at}[{i}]"))),
        Value::Object(o) => o.iter().find_map(|(k, x)| non_finite_path(x, format!("{at}.{k}"))),
        _ => None,
    }
}

/// Writes every float with 17 significant digits; everything else as
/// the wrapped formatter would.
struct FixedDigits<F>(F);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl<F: Formatter> Formatter for FixedDigits<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

fn write_value<F: Formatter>(value: &Value, formatter: F) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits(formatter));
    value.serialize(&mut ser).map_err(|e| DataError::Serialize(e.to_string()))?;
    Ok(out)
}

/// Compact, key-sorted, 17-significant-digit JSON.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, DataError> {
    let v = serde_json::to_value(value).map_err(|e| DataError::Serialize(e.to_string()))?;
    write_value(&v, serde_json::ser::CompactFormatter)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Order-sensitive hash of the canonical record list.
pub fn dataset_hash(records: &[RunRecord]) -> Result<String, DataError> {
    Ok(sha256_hex(&canonical_json(&records)?))
}

/// The file form: `{"bundle": …, "sha256": …}`, pretty-printed.
pub fn bundle_to_bytes(bundle: &LawBundle) -> Result<Vec<u8>, DataError> {
    bundle.validate()?;
    let body = serde_json::to_value(bundle).map_err(|e| DataError::Serialize(e.to_string()))?;
    let digest = sha256_hex(&write_value(&body, serde_json::ser::CompactFormatter)?);
    let envelope = serde_json::json!({ "bundle": body, "sha256": digest });
    let mut bytes = write_value(&envelope, PrettyFormatter::with_indent(b"  "))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn bundle_from_bytes(bytes: &[u8], expected_version: u32) -> Result<LawBundle, DataError> {
    let envelope: Value =
        serde_json::from_slice(bytes).map_err(|e| DataError::Corruption(format!("not a JSON document: {e}")))?;
    let (Some(body), Some(Value::String(digest))) = (envelope.get("bundle"), envelope.get("sha256")) else {
        return Err(DataError::Corruption("missing `bundle` or `sha256`".into()));
    };
    let actual = sha256_hex(&write_value(body, serde_json::ser::CompactFormatter)?);
    if &actual != digest {
        return Err(DataError::Corruption(format!("checksum mismatch: stored {digest}, computed {actual}")));
    }
    let found = body
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| DataError::Corruption("missing schema_version".into()))?;
    if found != expected_version as u64 {
        return Err(DataError::VersionMismatch { found, expected: expected_version });
    }
    let bundle: LawBundle = serde_json::from_value(body.clone())
        .map_err(|e| DataError::Corruption(format!("bundle does not match the schema: {e}")))?;
    bundle.validate()?;
    Ok(bundle)
}

/// Atomic: writes a sibling temp file, then renames over `path`.
pub fn save_bundle(bundle: &LawBundle, path: &Path) -> Result<(), DataError> {
    let bytes = bundle_to_bytes(bundle)?;
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io_err = |e: io::Error| DataError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<LawBundle, DataError> {
    load_bundle_expecting(path, SCHEMA_VERSION)
}

pub fn load_bundle_expecting(path: &Path, expected_version: u32) -> Result<LawBundle, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    bundle_from_bytes(&bytes, expected_version)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_joint_law, FitConfig};
    use crate::lawcore::FractionCurve;

    pub(crate) fn sample_bundle() -> LawBundle {
        let task = TaskId::new("en-de").unwrap();
        let pts: Vec<WeightedPoint> = [0.3, 1.0]
            .iter()
            .flat_map(|&p| {
                [2e7, 6e7, 2e8, 6e8, 1e9]
                    .into_iter()
                    .map(move |n: f64| WeightedPoint::new(n, p, 100.0 * p.powf(-0.3) * n.powf(-0.3) + 1.0))
            })
            .collect();
        let config = FitConfig { multistart_count: 4, ..FitConfig::default() };
        let (joint, diag) = fit_joint_law(&task, &pts, MetricDirection::LossLike, &config).unwrap();
        let fit = FractionFit::new(task.clone(), FractionCurve::Linear { c1: 0.9 }).unwrap();
        let laws = TaskLaws {
            single_task: joint.single_task().unwrap(),
            effective_fractions: [(WeightKey::ONE, 1.0)].into(),
            joint,
            joint_diagnostics: diag.clone(),
            per_weighting: BTreeMap::new(),
            fractions: vec![FractionFitRecord { fit, diagnostics: diag }],
            uncertainty: None,
            observations: pts,
        };
        LawBundle {
            schema_version: SCHEMA_VERSION,
            metric: "loss".into(),
            direction: MetricDirection::LossLike,
            testset: "wmt".into(),
            tasks: [(task, laws)].into(),
            provenance: Provenance {
                dataset_hash: "00".into(),
                config: serde_json::json!({"seed": 7, "sigma": 0.01}),
                tool_version: "test".into(),
            },
        }
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        let b = sample_bundle();
        save_bundle(&b, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded, b);
        save_bundle(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn floats_use_seventeen_digits() {
        let bytes = canonical_json(&serde_json::json!({"x": 0.1, "n": 3})).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), r#"{"n":3,"x":1.0000000000000001e-1}"#);
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = bundle_to_bytes(&sample_bundle()).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(bundle_from_bytes(cut, SCHEMA_VERSION), Err(DataError::Corruption(_))));
    }

    #[test]
    fn tampering_is_corruption() {
        let text = String::from_utf8(bundle_to_bytes(&sample_bundle()).unwrap()).unwrap();
        let tampered = text.replacen("\"loss\"", "\"bleu\"", 1);
        assert_ne!(text, tampered);
        assert!(matches!(
            bundle_from_bytes(tampered.as_bytes(), SCHEMA_VERSION),
            Err(DataError::Corruption(m)) if m.contains("checksum")
        ));
    }

    #[test]
    fn version_mismatch() {
        let bytes = bundle_to_bytes(&sample_bundle()).unwrap();
        assert!(bundle_from_bytes(&bytes, SCHEMA_VERSION).is_ok());
        assert!(matches!(
            bundle_from_bytes(&bytes, SCHEMA_VERSION - 1),
            Err(DataError::VersionMismatch { found: 1, expected: 0 })
        ));
    }

    #[test]
    fn fraction_without_baseline_is_invalid() {
        let mut b = sample_bundle();
        let laws = b.tasks.values_mut().next().unwrap();
        laws.joint.betas.remove(&WeightKey::ONE);
        assert!(matches!(b.validate(), Err(DataError::InvalidBundle(_))));
    }
}
