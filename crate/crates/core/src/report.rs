//! Deterministic rendering of results as JSON, CSV tables and plot data.
//!
//! Accuracies always carry exactly four decimals, rounded half to even.
//! Ensembles are rendered as lexicographically sorted run-id lists; in CSV
//! and plot files the ids are joined with `+`. Nothing time- or host-dependent
//! is written unless [`Provenance`] is attached explicitly.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::grouping::{GroupKey, GroupReport};
use crate::ingest::RunFile;
use crate::metrics::{Accuracy, ClassMetrics, ConfusionMatrix, MetricsBundle};
use crate::model::{AlignMode, EnsembleSpec, LabelSet, ModelError, PredictionRun, RunSet};
use crate::sweep::{IndividualRow, Scored, SweepAll, SweepReport};
use crate::voting::TiePolicy;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{kind} reports cannot be rendered as {format}")]
    UnsupportedKindFormat { kind: &'static str, format: Format },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Json,
    Csv,
    /// Two-column `label,accuracy` bar-chart data.
    Plot,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Plot => "plot",
        })
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "plot" => Ok(Format::Plot),
            _ => Err(format!("unknown format {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseResult {
    pub ensemble: EnsembleSpec,
    pub metrics: MetricsBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    IndividualTable(Vec<IndividualRow>),
    Sweep(SweepReport),
    BestPerSize(SweepAll),
    Groups(GroupReport),
    Fuse(FuseResult),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::IndividualTable(_) => "individual-table",
            Payload::Sweep(_) => "sweep",
            Payload::BestPerSize(_) => "best-per-size",
            Payload::Groups(_) => "groups",
            Payload::Fuse(_) => "fuse",
        }
    }
}

/// Opt-in, non-reproducible details about where a report was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub generated_at_unix: u64,
    pub host: String,
}

impl Provenance {
    pub fn current() -> Self {
        let generated_at_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
            .map(|h| h.trim().to_owned())
            .unwrap_or_default();
        Self {
            generated_at_unix,
            host,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub manifest: String,
    pub tie_policy: TiePolicy,
    pub alignment: AlignMode,
    pub runs: usize,
    pub samples: usize,
    pub dropped_samples: usize,
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub metadata: Metadata,
    /// Run ids by run-set index, used to render ensemble masks.
    pub run_ids: Vec<String>,
    pub payload: Payload,
}

impl ReportDocument {
    pub fn new(
        manifest: impl Into<String>,
        runs: &RunSet,
        labels: &LabelSet,
        alignment: AlignMode,
        tie_policy: TiePolicy,
        payload: Payload,
    ) -> Self {
        Self {
            metadata: Metadata {
                manifest: manifest.into(),
                tie_policy,
                alignment,
                runs: runs.len(),
                samples: runs.samples(),
                dropped_samples: runs.dropped(),
                labels: labels.names().to_vec(),
                provenance: None,
            },
            run_ids: runs.runs().iter().map(|r| r.run_id.clone()).collect(),
            payload,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.metadata.provenance = Some(provenance);
        self
    }

    pub fn kind(&self) -> &'static str {
        self.payload.kind()
    }

    fn members(&self, ensemble: EnsembleSpec) -> Vec<&str> {
        let mut ids: Vec<&str> = ensemble
            .members()
            .map(|i| self.run_ids[i].as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    fn label(&self, ensemble: EnsembleSpec) -> String {
        self.members(ensemble).join("+")
    }
}

/// Renders `doc`. Identical documents always produce identical bytes.
pub fn emit(doc: &ReportDocument, format: Format) -> Result<Vec<u8>, ReportError> {
    match format {
        Format::Json => emit_json(doc),
        Format::Csv => emit_csv(doc),
        Format::Plot => emit_plot_data(doc),
    }
}

/// Bar-chart rows (`label,accuracy`): run ids for tables, `+`-joined ids for
/// sweeps, `k=<size>` for best-per-size and tags for groups.
pub fn emit_plot_data(doc: &ReportDocument) -> Result<Vec<u8>, ReportError> {
    let rows: Vec<(String, Accuracy)> = match &doc.payload {
        Payload::IndividualTable(rows) => rows
            .iter()
            .map(|r| (r.run_id.clone(), r.accuracy))
            .collect(),
        Payload::Sweep(report) => report
            .ranked
            .iter()
            .map(|s| (doc.label(s.ensemble), s.accuracy))
            .collect(),
        Payload::BestPerSize(all) => all
            .best_per_size
            .iter()
            .map(|b| (format!("k={}", b.size), b.best.accuracy))
            .collect(),
        Payload::Groups(report) => report
            .groups
            .iter()
            .map(|g| (g.tag.clone(), g.metrics.accuracy))
            .collect(),
        Payload::Fuse(_) => {
            return Err(ReportError::UnsupportedKindFormat {
                kind: doc.kind(),
                format: Format::Plot,
            })
        }
    };
    let mut w = csv_writer();
    w.write_record(["label", "accuracy"])?;
    for (label, acc) in rows {
        w.write_record([label, acc.to_string()])?;
    }
    finish(w)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ReportError> {
    w.into_inner()
        .map_err(|e| ReportError::Csv(csv::Error::from(e.into_error())))
}

fn emit_csv(doc: &ReportDocument) -> Result<Vec<u8>, ReportError> {
    let mut w = csv_writer();
    match &doc.payload {
        Payload::IndividualTable(rows) => {
            w.write_record(["model", "accuracy"])?;
            for row in rows {
                w.write_record([row.run_id.clone(), row.accuracy.to_string()])?;
            }
        }
        Payload::Fuse(result) => {
            w.write_record(["model", "accuracy"])?;
            w.write_record(["ensemble".to_owned(), result.metrics.accuracy.to_string()])?;
        }
        Payload::Sweep(report) => {
            w.write_record(["rank", "members", "accuracy", "ties"])?;
            for (i, s) in report.ranked.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    doc.label(s.ensemble),
                    s.accuracy.to_string(),
                    s.ties.to_string(),
                ])?;
            }
        }
        Payload::BestPerSize(all) => {
            w.write_record(["size", "members", "accuracy"])?;
            for b in &all.best_per_size {
                w.write_record([
                    b.size.to_string(),
                    doc.label(b.best.ensemble),
                    b.best.accuracy.to_string(),
                ])?;
            }
        }
        Payload::Groups(report) => {
            w.write_record(["tag", "members", "accuracy"])?;
            for g in &report.groups {
                w.write_record([
                    g.tag.clone(),
                    doc.label(g.ensemble),
                    g.metrics.accuracy.to_string(),
                ])?;
            }
        }
    }
    finish(w)
}

/// Float rendered with four decimals.
struct Fixed4(f64);

impl Serialize for Fixed4 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serde_json::value::RawValue::from_string(format!("{:.4}", self.0))
            .map_err(serde::ser::Error::custom)?
            .serialize(serializer)
    }
}

#[derive(Serialize)]
struct JsonDocument<'a> {
    kind: &'static str,
    metadata: &'a Metadata,
    result: JsonResult<'a>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum JsonResult<'a> {
    Table {
        rows: Vec<JsonTableRow<'a>>,
    },
    Sweep(JsonSweep<'a>),
    Best {
        total_evaluations: u64,
        best_per_size: Vec<JsonBest<'a>>,
        sweeps: Vec<JsonSweep<'a>>,
    },
    Groups {
        key: GroupKey,
        groups: Vec<JsonGroup<'a>>,
    },
    Fuse(JsonMetrics<'a>),
}

impl Serialize for GroupKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

#[derive(Serialize)]
struct JsonTableRow<'a> {
    model: &'a str,
    accuracy: Accuracy,
}

#[derive(Serialize)]
struct JsonRanked<'a> {
    rank: usize,
    members: Vec<&'a str>,
    mask: u64,
    accuracy: Accuracy,
    ties: usize,
}

#[derive(Serialize)]
struct JsonSweep<'a> {
    size: usize,
    total_combinations: u64,
    ranked: Vec<JsonRanked<'a>>,
}

#[derive(Serialize)]
struct JsonBest<'a> {
    size: usize,
    members: Vec<&'a str>,
    mask: u64,
    accuracy: Accuracy,
    ties: usize,
}

#[derive(Serialize)]
struct JsonClass<'a> {
    label: &'a str,
    precision: Fixed4,
    recall: Fixed4,
    f1: Fixed4,
}

#[derive(Serialize)]
struct JsonMetrics<'a> {
    members: Vec<&'a str>,
    mask: u64,
    accuracy: Accuracy,
    ties: usize,
    abstentions: usize,
    per_class: Vec<JsonClass<'a>>,
    confusion: &'a ConfusionMatrix,
}

#[derive(Serialize)]
struct JsonGroup<'a> {
    tag: &'a str,
    #[serde(flatten)]
    metrics: JsonMetrics<'a>,
}

impl ReportDocument {
    fn json_sweep(&self, report: &SweepReport) -> JsonSweep<'_> {
        JsonSweep {
            size: report.size,
            total_combinations: report.total,
            ranked: report
                .ranked
                .iter()
                .enumerate()
                .map(|(i, s)| JsonRanked {
                    rank: i + 1,
                    members: self.members(s.ensemble),
                    mask: s.ensemble.mask(),
                    accuracy: s.accuracy,
                    ties: s.ties,
                })
                .collect(),
        }
    }

    fn json_best(&self, size: usize, best: &Scored) -> JsonBest<'_> {
        JsonBest {
            size,
            members: self.members(best.ensemble),
            mask: best.ensemble.mask(),
            accuracy: best.accuracy,
            ties: best.ties,
        }
    }

    fn json_metrics<'a>(&'a self, ensemble: EnsembleSpec, m: &'a MetricsBundle) -> JsonMetrics<'a> {
        JsonMetrics {
            members: self.members(ensemble),
            mask: ensemble.mask(),
            accuracy: m.accuracy,
            ties: m.ties,
            abstentions: m.abstentions,
            per_class: m
                .per_class
                .iter()
                .zip(&self.metadata.labels)
                .map(|(c, label): (&ClassMetrics, _)| JsonClass {
                    label,
                    precision: Fixed4(c.precision),
                    recall: Fixed4(c.recall),
                    f1: Fixed4(c.f1),
                })
                .collect(),
            confusion: &m.confusion,
        }
    }
}

fn emit_json(doc: &ReportDocument) -> Result<Vec<u8>, ReportError> {
    let result = match &doc.payload {
        Payload::IndividualTable(rows) => JsonResult::Table {
            rows: rows
                .iter()
                .map(|r| JsonTableRow {
                    model: &r.run_id,
                    accuracy: r.accuracy,
                })
                .collect(),
        },
        Payload::Sweep(report) => JsonResult::Sweep(doc.json_sweep(report)),
        Payload::BestPerSize(all) => JsonResult::Best {
            total_evaluations: all.total_evaluations,
            best_per_size: all
                .best_per_size
                .iter()
                .map(|b| doc.json_best(b.size, &b.best))
                .collect(),
            sweeps: all.reports.iter().map(|r| doc.json_sweep(r)).collect(),
        },
        Payload::Groups(report) => JsonResult::Groups {
            key: report.key,
            groups: report
                .groups
                .iter()
                .map(|g| JsonGroup {
                    tag: &g.tag,
                    metrics: doc.json_metrics(g.ensemble, &g.metrics),
                })
                .collect(),
        },
        Payload::Fuse(result) => {
            JsonResult::Fuse(doc.json_metrics(result.ensemble, &result.metrics))
        }
    };
    let mut bytes = serde_json::to_vec_pretty(&JsonDocument {
        kind: doc.kind(),
        metadata: &doc.metadata,
        result,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Serializes a run in the run-file format read by [`crate::ingest::load_run`].
pub fn emit_run(run: &PredictionRun, labels: &LabelSet) -> Result<Vec<u8>, ReportError> {
    let mut bytes = serde_json::to_vec_pretty(&RunFile::from_run(run, labels)?)?;
    bytes.push(b'\n');
    Ok(bytes)
}
