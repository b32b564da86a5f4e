//! Parsing and validation of the manifest, ground-truth file and run files.
//!
//! The manifest is JSON:
//!
//! ```json
//! {"version":1,"labels":["..."],"truth":"truth.csv",
//!  "runs":[{"id":"camelbert_post","family":"camelbert","representation":"post",
//!           "file":"runs/camelbert_post.json"}]}
//! ```
//!
//! The truth file is CSV with the header `sample_id,label`. Run files are JSON
//! objects with a `run_id`, an optional free-form `metadata` object and a
//! `predictions` array of `{"sample_id","label","confidence"?}` records.
//! Confidence vectors are all-or-none within a run.
//!
//! Paths in the manifest resolve relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    align, check_confidence, AlignMode, GroundTruth, LabelSet, ModelError, PredictionRun, RunSet,
};

pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}: unsupported manifest version {version}", path.display())]
    UnsupportedVersion { path: PathBuf, version: u64 },
    #[error("manifest lists run id {0:?} more than once")]
    DuplicateRunId(String),
    #[error("manifest labels: {0}")]
    Labels(ModelError),
    #[error("{}: file has no data rows", path.display())]
    EmptyFile { path: PathBuf },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{}: row {row}: unknown label {label:?}", path.display())]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        label: String,
    },
    #[error("{}: row {row}: duplicate sample id {sample_id:?}", path.display())]
    DuplicateSampleId {
        path: PathBuf,
        row: usize,
        sample_id: String,
    },
    #[error("run {run_id:?}: sample {sample_id:?} has unknown label {label:?}")]
    UnknownPredictedLabel {
        run_id: String,
        sample_id: String,
        label: String,
    },
    #[error("run {run_id:?}: confidence for sample {sample_id:?} {reason}")]
    ConfidenceMismatch {
        run_id: String,
        sample_id: String,
        reason: String,
    },
    #[error(transparent)]
    Alignment(ModelError),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_owned(),
        source,
    }
}

fn json_error(path: &Path, err: serde_json::Error) -> IngestError {
    IngestError::Parse {
        path: path.to_owned(),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub id: String,
    pub family: String,
    pub representation: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u64,
    pub labels: Vec<String>,
    pub truth: String,
    pub runs: Vec<RunEntry>,
    /// Directory the manifest was read from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn label_set(&self) -> Result<LabelSet, IngestError> {
        LabelSet::new(self.labels.iter().cloned()).map_err(IngestError::Labels)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, IngestError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut manifest: Manifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(err) => {
            // A newer version may legitimately carry fields this one rejects.
            let version = serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v.get("version").and_then(serde_json::Value::as_u64));
            return Err(match version {
                Some(version) if version != MANIFEST_VERSION => IngestError::UnsupportedVersion {
                    path: path.to_owned(),
                    version,
                },
                _ => json_error(path, err),
            });
        }
    };
    if manifest.version != MANIFEST_VERSION {
        return Err(IngestError::UnsupportedVersion {
            path: path.to_owned(),
            version: manifest.version,
        });
    }
    let mut seen = HashSet::new();
    for run in &manifest.runs {
        if !seen.insert(run.id.as_str()) {
            return Err(IngestError::DuplicateRunId(run.id.clone()));
        }
    }
    manifest.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    Ok(manifest)
}

/// Parses the truth file, collecting every row-level violation.
pub fn check_truth(path: &Path, labels: &LabelSet) -> Result<GroundTruth, Vec<IngestError>> {
    let bytes = fs::read(path).map_err(|e| vec![io_error(path)(e)])?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let schema = |message: String| IngestError::Schema {
        path: path.to_owned(),
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| vec![csv_error(path, e)])?
        .clone();
    if headers.is_empty() {
        return Err(vec![IngestError::EmptyFile {
            path: path.to_owned(),
        }]);
    }
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "label"] {
        return Err(vec![schema(format!(
            "expected header `sample_id,label`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ))]);
    }

    let mut errors = Vec::new();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(csv_error(path, e));
                continue;
            }
        };
        let row = record.position().map_or(0, |p| p.line() as usize);
        let (sample_id, label) = (&record[0], &record[1]);
        let index = labels.index_of(label);
        if index.is_none() {
            errors.push(IngestError::UnknownLabel {
                path: path.to_owned(),
                row,
                label: label.to_owned(),
            });
        }
        if !seen.insert(sample_id.to_owned()) {
            errors.push(IngestError::DuplicateSampleId {
                path: path.to_owned(),
                row,
                sample_id: sample_id.to_owned(),
            });
        }
        if let Some(index) = index {
            entries.push((sample_id.to_owned(), index));
        }
    }
    if seen.is_empty() && errors.is_empty() {
        errors.push(IngestError::EmptyFile {
            path: path.to_owned(),
        });
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    GroundTruth::new(entries, labels.len()).map_err(|e| vec![schema(e.to_string())])
}

fn csv_error(path: &Path, err: csv::Error) -> IngestError {
    let (line, message) = match err.position() {
        Some(p) => (p.line() as usize, err.to_string()),
        None => (0, err.to_string()),
    };
    IngestError::Parse {
        path: path.to_owned(),
        line,
        column: 0,
        message,
    }
}

pub fn load_truth(path: &Path, labels: &LabelSet) -> Result<GroundTruth, IngestError> {
    check_truth(path, labels).map_err(first)
}

fn first(mut errors: Vec<IngestError>) -> IngestError {
    errors.swap_remove(0)
}

/// On-disk form of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<f64>>,
}

/// On-disk form of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
    pub predictions: Vec<PredictionRecord>,
}

impl RunFile {
    /// Inverse of [`check_run`]. Fails on a label index outside `labels`.
    pub fn from_run(run: &PredictionRun, labels: &LabelSet) -> Result<Self, ModelError> {
        let predictions = run
            .predictions
            .iter()
            .map(|(sample_id, &label)| {
                let name = labels.name(label).ok_or_else(|| ModelError::UnknownLabel {
                    run_id: run.run_id.clone(),
                    sample_id: sample_id.clone(),
                })?;
                Ok(PredictionRecord {
                    sample_id: sample_id.clone(),
                    label: name.to_owned(),
                    confidence: run
                        .confidences
                        .as_ref()
                        .and_then(|c| c.get(sample_id).cloned()),
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self {
            run_id: run.run_id.clone(),
            metadata: run.metadata.clone(),
            predictions,
        })
    }
}

/// Parses one run file, collecting every per-sample violation.
pub fn check_run(
    path: &Path,
    entry: &RunEntry,
    labels: &LabelSet,
) -> Result<PredictionRun, Vec<IngestError>> {
    let text = fs::read_to_string(path).map_err(|e| vec![io_error(path)(e)])?;
    let file: RunFile = serde_json::from_str(&text).map_err(|e| vec![json_error(path, e)])?;
    let schema = |message: String| IngestError::Schema {
        path: path.to_owned(),
        message,
    };

    let mut errors = Vec::new();
    if file.run_id != entry.id {
        errors.push(schema(format!(
            "run_id {:?} does not match manifest id {:?}",
            file.run_id, entry.id
        )));
    }
    if file.predictions.is_empty() {
        errors.push(schema("run has no predictions".into()));
    }
    let with_confidence = file
        .predictions
        .iter()
        .filter(|p| p.confidence.is_some())
        .count();
    if with_confidence != 0 && with_confidence != file.predictions.len() {
        errors.push(schema(format!(
            "confidence present on {with_confidence} of {} predictions; must be all or none",
            file.predictions.len()
        )));
    }

    let mut predictions = IndexMap::with_capacity(file.predictions.len());
    let mut confidences = IndexMap::new();
    for record in file.predictions {
        let Some(label) = labels.index_of(&record.label) else {
            errors.push(IngestError::UnknownPredictedLabel {
                run_id: entry.id.clone(),
                sample_id: record.sample_id,
                label: record.label,
            });
            continue;
        };
        if predictions.contains_key(&record.sample_id) {
            errors.push(schema(format!(
                "duplicate sample id {:?}",
                record.sample_id
            )));
            continue;
        }
        if let Some(confidence) = record.confidence {
            if let Err(reason) = check_confidence(&confidence, label, labels.len()) {
                errors.push(IngestError::ConfidenceMismatch {
                    run_id: entry.id.clone(),
                    sample_id: record.sample_id.clone(),
                    reason,
                });
            }
            confidences.insert(record.sample_id.clone(), confidence);
        }
        predictions.insert(record.sample_id, label);
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(PredictionRun {
        run_id: entry.id.clone(),
        family: entry.family.clone(),
        representation: entry.representation.clone(),
        predictions,
        confidences: (with_confidence > 0).then_some(confidences),
        metadata: file.metadata,
    })
}

pub fn load_run(
    path: &Path,
    entry: &RunEntry,
    labels: &LabelSet,
) -> Result<PredictionRun, IngestError> {
    check_run(path, entry, labels).map_err(first)
}

/// Everything a command needs, loaded and aligned.
#[derive(Debug, Clone)]
pub struct Project {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub labels: LabelSet,
    pub runs: RunSet,
    pub align_mode: AlignMode,
}

/// Loads the manifest, truth and every run, then aligns.
///
/// Manifest-level problems stop early. Past that point every violation in
/// every file is collected before returning.
pub fn load_project(path: &Path, mode: AlignMode) -> Result<Project, Vec<IngestError>> {
    let manifest = load_manifest(path).map_err(|e| vec![e])?;
    let labels = manifest.label_set().map_err(|e| vec![e])?;

    let mut errors = Vec::new();
    let truth = check_truth(&manifest.resolve(&manifest.truth), &labels)
        .map_err(|e| errors.extend(e))
        .ok();
    // Parsed concurrently, collected in manifest order.
    let parsed: Vec<_> = manifest
        .runs
        .par_iter()
        .map(|entry| check_run(&manifest.resolve(&entry.file), entry, &labels))
        .collect();
    let mut runs = Vec::with_capacity(parsed.len());
    for result in parsed {
        match result {
            Ok(run) => runs.push(run),
            Err(e) => errors.extend(e),
        }
    }
    let Some(truth) = truth else {
        return Err(errors);
    };
    if !errors.is_empty() {
        return Err(errors);
    }
    let runs = align(runs, &truth, mode).map_err(|e| {
        e.0.into_iter()
            .map(IngestError::Alignment)
            .collect::<Vec<_>>()
    })?;
    Ok(Project {
        manifest_path: path.to_owned(),
        manifest,
        labels,
        runs,
        align_mode: mode,
    })
}
