//! Pose datasets: a JSON array of records with an image name, a
//! scalar-first quaternion and a translation in meters. Field names are set
//! by [`FieldMapping`]; fields it does not name are carried through.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use satpose::geometry::{Quaternion, RigidPose, Vec3};

use crate::error::CliError;
use crate::io::write_atomic;

/// Largest accepted deviation of a stored quaternion's norm from 1.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMapping {
    pub filename: String,
    pub quaternion: String,
    pub translation: String,
    pub domain: String,
    /// Set when the file stores the camera → body rotation.
    pub conjugate_quaternion: bool,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            filename: "filename".into(),
            quaternion: "q_vbs2tango_true".into(),
            translation: "r_Vo2To_vbs_true".into(),
            domain: "domain".into(),
            conjugate_quaternion: false,
        }
    }
}

impl FieldMapping {
    pub fn validate(&self) -> Result<(), CliError> {
        let names = [
            &self.filename,
            &self.quaternion,
            &self.translation,
            &self.domain,
        ];
        if names.iter().any(|n| n.is_empty()) {
            return Err(CliError::Validation(
                "config: dataset field names must be non-empty".into(),
            ));
        }
        for (i, a) in names.iter().enumerate() {
            if names[i + 1..].contains(a) {
                return Err(CliError::Validation(format!(
                    "config: dataset field {a:?} mapped twice"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Synthetic,
    Lightbox,
    Sunlamp,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Synthetic, Domain::Lightbox, Domain::Sunlamp];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Synthetic => "synthetic",
            Domain::Lightbox => "lightbox",
            Domain::Sunlamp => "sunlamp",
        }
    }

    fn parse(s: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub filename: String,
    /// `None` only in prediction files, for samples without a pose.
    pub pose: Option<RigidPose>,
    pub domain: Option<Domain>,
    /// Unmapped fields, written back unchanged.
    pub extra: Map<String, Value>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {index}: field {field:?}: {message}")]
    Schema {
        index: usize,
        field: String,
        message: String,
    },
    #[error(
        "record {id:?}: quaternion norm {norm} is not within {QUATERNION_NORM_TOLERANCE} of 1"
    )]
    NonUnitQuaternion { id: String, norm: f64 },
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn schema(index: usize, field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        index,
        field: field.to_string(),
        message: message.into(),
    }
}

fn numbers<const N: usize>(v: &Value, index: usize, field: &str) -> Result<[f64; N], DatasetError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| schema(index, field, format!("expected an array of {N} numbers")))?;
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| schema(index, field, format!("expected an array of {N} numbers")))?;
    }
    Ok(out)
}

/// Parses dataset JSON. With `allow_missing_pose`, records may have a null
/// or absent pose (prediction files); otherwise both pose fields are required.
pub fn parse_dataset(
    text: &str,
    mapping: &FieldMapping,
    allow_missing_pose: bool,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let root: Value = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Value::Array(items) = root else {
        return Err(schema(0, "<root>", "expected a JSON array of records"));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let Value::Object(mut obj) = item else {
                return Err(schema(index, "<record>", "expected an object"));
            };
            let filename = match obj.remove(&mapping.filename) {
                Some(Value::String(s)) => s,
                _ => return Err(schema(index, &mapping.filename, "expected a string")),
            };
            let q = obj.remove(&mapping.quaternion).unwrap_or(Value::Null);
            let t = obj.remove(&mapping.translation).unwrap_or(Value::Null);
            let pose = if allow_missing_pose && q.is_null() && t.is_null() {
                None
            } else {
                let q = numbers::<4>(&q, index, &mapping.quaternion)?;
                let t = numbers::<3>(&t, index, &mapping.translation)?;
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
                    return Err(DatasetError::NonUnitQuaternion { id: filename, norm });
                }
                let mut rotation = Quaternion::from_array(q).expect("norm near 1");
                if mapping.conjugate_quaternion {
                    rotation = rotation.conjugate();
                }
                Some(RigidPose::new(rotation, Vec3::from(t)).expect("finite translation"))
            };
            let domain = match obj.remove(&mapping.domain) {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(Domain::parse(&s).ok_or_else(|| {
                    schema(index, &mapping.domain, format!("unknown domain {s:?}"))
                })?),
                Some(_) => return Err(schema(index, &mapping.domain, "expected a string")),
            };
            Ok(DatasetRecord {
                filename,
                pose,
                domain,
                extra: obj,
            })
        })
        .collect()
}

pub fn load_dataset(path: &Path, mapping: &FieldMapping) -> Result<Vec<DatasetRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_dataset(&text, mapping, false)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Loads a file whose records may lack a pose.
pub fn load_predictions(
    path: &Path,
    mapping: &FieldMapping,
) -> Result<Vec<DatasetRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_dataset(&text, mapping, true)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn to_json(records: &[DatasetRecord], mapping: &FieldMapping) -> Value {
    Value::Array(
        records
            .iter()
            .map(|r| {
                let mut obj = r.extra.clone();
                obj.insert(mapping.filename.clone(), Value::String(r.filename.clone()));
                let (q, t) = match &r.pose {
                    Some(p) => {
                        let rot = if mapping.conjugate_quaternion {
                            p.rotation.conjugate()
                        } else {
                            p.rotation
                        };
                        (
                            serde_json::json!(rot.to_array()),
                            serde_json::json!([p.translation.x, p.translation.y, p.translation.z]),
                        )
                    }
                    None => (Value::Null, Value::Null),
                };
                obj.insert(mapping.quaternion.clone(), q);
                obj.insert(mapping.translation.clone(), t);
                if let Some(d) = r.domain {
                    obj.insert(mapping.domain.clone(), Value::String(d.name().into()));
                }
                Value::Object(obj)
            })
            .collect(),
    )
}

pub fn save_dataset(
    path: &Path,
    records: &[DatasetRecord],
    mapping: &FieldMapping,
) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(&to_json(records, mapping)).expect("JSON values serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
