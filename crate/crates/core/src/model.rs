//! Domain types shared across the crate: label vocabulary, ground truth,
//! prediction runs and the aligned [`RunSet`] that voting and sweeps operate on.

use std::collections::{HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard upper bound on the number of runs: one `u64` mask bit per run.
pub const MAX_RUNS: usize = 64;

/// Tolerance on confidence vector sums.
pub const CONFIDENCE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("duplicate sample id {0:?} in ground truth")]
    DuplicateSampleId(String),
    #[error("ground truth sample {sample_id:?} has label index {label} outside 0..{classes}")]
    TruthLabelOutOfRange {
        sample_id: String,
        label: usize,
        classes: usize,
    },
    #[error("run set is empty")]
    EmptyRunSet,
    #[error("{count} runs exceed the limit of {MAX_RUNS}")]
    TooManyRuns { count: usize },
    #[error("duplicate run id {0:?}")]
    DuplicateRunId(String),
    #[error("run {run_id:?} is missing {count} ground-truth samples")]
    MissingSamples { run_id: String, count: usize },
    #[error("run {run_id:?} has {count} samples absent from the ground truth")]
    UnexpectedSamples { run_id: String, count: usize },
    #[error("run {run_id:?} predicts an unknown label for sample {sample_id:?}")]
    UnknownLabel { run_id: String, sample_id: String },
    #[error("run {run_id:?}: confidence for sample {sample_id:?} {reason}")]
    ConfidenceMismatch {
        run_id: String,
        sample_id: String,
        reason: String,
    },
    #[error("runs share no common samples with the ground truth")]
    EmptyIntersection,
    #[error("ensemble mask {mask:#x} is invalid for {runs} runs")]
    InvalidEnsemble { mask: u64, runs: usize },
}

/// Every violation found while aligning runs, in run order.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct AlignmentErrors(pub Vec<ModelError>);

/// Ordered, duplicate-free class vocabulary. Position defines the label index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ModelError::EmptyLabelSet);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(ModelError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self { labels, index })
    }

    /// Exact-string lookup; no case folding or trimming.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }
}

/// Annotated evaluation set. Its entry order is the canonical sample order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    sample_ids: Vec<String>,
    labels: Vec<usize>,
    classes: usize,
}

impl GroundTruth {
    pub fn new<I>(entries: I, classes: usize) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (String, usize)>,
    {
        let mut sample_ids = Vec::new();
        let mut labels = Vec::new();
        let mut seen = HashSet::new();
        for (sample_id, label) in entries {
            if label >= classes {
                return Err(ModelError::TruthLabelOutOfRange {
                    sample_id,
                    label,
                    classes,
                });
            }
            if !seen.insert(sample_id.clone()) {
                return Err(ModelError::DuplicateSampleId(sample_id));
            }
            sample_ids.push(sample_id);
            labels.push(label);
        }
        if sample_ids.is_empty() {
            return Err(ModelError::EmptyTruth);
        }
        Ok(Self {
            sample_ids,
            labels,
            classes,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.sample_ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().copied())
    }

    fn restricted_to(&self, keep: &HashSet<&str>) -> Self {
        let (sample_ids, labels) = self
            .entries()
            .filter(|(id, _)| keep.contains(id))
            .map(|(id, label)| (id.to_owned(), label))
            .unzip();
        Self {
            sample_ids,
            labels,
            classes: self.classes,
        }
    }
}

/// One model's hard predictions over the evaluation set, as loaded from disk.
///
/// `predictions` keeps file order so a run can be written back unchanged.
/// `confidences`, when present, holds one probability vector per predicted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRun {
    pub run_id: String,
    pub family: String,
    pub representation: String,
    pub predictions: IndexMap<String, usize>,
    pub confidences: Option<IndexMap<String, Vec<f64>>>,
    /// Free-form provenance carried through from the run file.
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

impl PredictionRun {
    pub fn new(
        run_id: impl Into<String>,
        family: impl Into<String>,
        representation: impl Into<String>,
        predictions: IndexMap<String, usize>,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            family: family.into(),
            representation: representation.into(),
            predictions,
            confidences: None,
            metadata: None,
        }
    }

    pub fn with_confidences(mut self, confidences: IndexMap<String, Vec<f64>>) -> Self {
        self.confidences = Some(confidences);
        self
    }
}

/// Checks one confidence vector against its hard label.
///
/// The hard label must hold the maximal probability; when several classes
/// share the maximum any of them is accepted.
pub fn check_confidence(confidence: &[f64], label: usize, classes: usize) -> Result<(), String> {
    if confidence.len() != classes {
        return Err(format!(
            "has {} entries, expected {classes}",
            confidence.len()
        ));
    }
    if confidence.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err("contains a negative or non-finite probability".into());
    }
    let sum: f64 = confidence.iter().sum();
    if (sum - 1.0).abs() > CONFIDENCE_SUM_TOLERANCE {
        return Err(format!("sums to {sum}, not 1"));
    }
    let max = confidence.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match confidence.get(label) {
        Some(&c) if c == max => Ok(()),
        Some(_) => Err(format!("argmax disagrees with hard label index {label}")),
        None => Err(format!("hard label index {label} out of range")),
    }
}

/// How [`align`] treats runs whose sample sets differ from the ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    #[default]
    Strict,
    Intersect,
}

impl fmt::Display for AlignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignMode::Strict => "strict",
            AlignMode::Intersect => "intersect",
        })
    }
}

/// A run whose predictions are laid out in ground-truth sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRun {
    pub run_id: String,
    pub family: String,
    pub representation: String,
    pub labels: Vec<usize>,
    pub confidences: Option<Vec<Vec<f64>>>,
}

/// Runs aligned to one ground truth. Run index `i` corresponds to mask bit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    runs: Vec<AlignedRun>,
    truth: GroundTruth,
    dropped: usize,
}

impl RunSet {
    pub fn runs(&self) -> &[AlignedRun] {
        &self.runs
    }

    pub fn run(&self, index: usize) -> Option<&AlignedRun> {
        self.runs.get(index)
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.truth.classes
    }

    pub fn samples(&self) -> usize {
        self.truth.len()
    }

    /// Ground-truth samples discarded by intersect alignment.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn index_of(&self, run_id: &str) -> Option<usize> {
        self.runs.iter().position(|r| r.run_id == run_id)
    }

    /// Rebuilds load-form runs from this set, for re-alignment.
    pub fn to_prediction_runs(&self) -> Vec<PredictionRun> {
        let ids = self.truth.sample_ids();
        self.runs
            .iter()
            .map(|run| PredictionRun {
                run_id: run.run_id.clone(),
                family: run.family.clone(),
                representation: run.representation.clone(),
                predictions: ids
                    .iter()
                    .cloned()
                    .zip(run.labels.iter().copied())
                    .collect(),
                confidences: run
                    .confidences
                    .as_ref()
                    .map(|c| ids.iter().cloned().zip(c.iter().cloned()).collect()),
                metadata: None,
            })
            .collect()
    }
}

/// Aligns runs to the ground truth, reporting every violation found.
pub fn align(
    runs: Vec<PredictionRun>,
    truth: &GroundTruth,
    mode: AlignMode,
) -> Result<RunSet, AlignmentErrors> {
    let mut errors = Vec::new();
    if runs.is_empty() {
        errors.push(ModelError::EmptyRunSet);
    }
    if runs.len() > MAX_RUNS {
        errors.push(ModelError::TooManyRuns { count: runs.len() });
    }
    let mut ids = HashSet::new();
    for run in &runs {
        if !ids.insert(run.run_id.as_str()) {
            errors.push(ModelError::DuplicateRunId(run.run_id.clone()));
        }
    }

    let classes = truth.classes();
    for run in &runs {
        for (sample_id, &label) in &run.predictions {
            if label >= classes {
                errors.push(ModelError::UnknownLabel {
                    run_id: run.run_id.clone(),
                    sample_id: sample_id.clone(),
                });
            }
        }
        if let Some(confidences) = &run.confidences {
            for (sample_id, &label) in &run.predictions {
                let issue = match confidences.get(sample_id) {
                    Some(c) => check_confidence(c, label, classes).err(),
                    None => Some("is missing".to_owned()),
                };
                if let Some(reason) = issue {
                    errors.push(ModelError::ConfidenceMismatch {
                        run_id: run.run_id.clone(),
                        sample_id: sample_id.clone(),
                        reason,
                    });
                }
            }
        }
    }

    let truth_ids: HashSet<&str> = truth.sample_ids().iter().map(String::as_str).collect();
    let (truth, dropped) = match mode {
        AlignMode::Strict => {
            for run in &runs {
                let missing = truth_ids
                    .iter()
                    .filter(|id| !run.predictions.contains_key(**id))
                    .count();
                if missing > 0 {
                    errors.push(ModelError::MissingSamples {
                        run_id: run.run_id.clone(),
                        count: missing,
                    });
                }
                let extra = run
                    .predictions
                    .keys()
                    .filter(|id| !truth_ids.contains(id.as_str()))
                    .count();
                if extra > 0 {
                    errors.push(ModelError::UnexpectedSamples {
                        run_id: run.run_id.clone(),
                        count: extra,
                    });
                }
            }
            (truth.clone(), 0)
        }
        AlignMode::Intersect => {
            let common: HashSet<&str> = truth_ids
                .iter()
                .copied()
                .filter(|id| runs.iter().all(|r| r.predictions.contains_key(*id)))
                .collect();
            if common.is_empty() {
                errors.push(ModelError::EmptyIntersection);
            }
            let restricted = truth.restricted_to(&common);
            let dropped = truth.len() - restricted.len();
            (restricted, dropped)
        }
    };

    if !errors.is_empty() {
        return Err(AlignmentErrors(errors));
    }

    let runs = runs
        .into_iter()
        .map(|run| {
            let labels = truth
                .sample_ids()
                .iter()
                .map(|id| run.predictions[id.as_str()])
                .collect();
            let confidences = run.confidences.as_ref().map(|c| {
                truth
                    .sample_ids()
                    .iter()
                    .map(|id| c[id.as_str()].clone())
                    .collect()
            });
            AlignedRun {
                run_id: run.run_id,
                family: run.family,
                representation: run.representation,
                labels,
                confidences,
            }
        })
        .collect();

    Ok(RunSet {
        runs,
        truth,
        dropped,
    })
}

/// A non-empty subset of a [`RunSet`], bit `i` selecting run `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnsembleSpec(u64);

impl EnsembleSpec {
    pub fn new(mask: u64, runs: usize) -> Result<Self, ModelError> {
        let in_range = runs >= MAX_RUNS || mask >> runs == 0;
        if mask == 0 || !in_range || runs > MAX_RUNS {
            return Err(ModelError::InvalidEnsemble { mask, runs });
        }
        Ok(Self(mask))
    }

    /// Every run of an `n`-run set.
    pub fn all(runs: usize) -> Result<Self, ModelError> {
        let mask = if runs >= MAX_RUNS {
            u64::MAX
        } else {
            (1u64 << runs).wrapping_sub(1)
        };
        Self::new(mask, runs)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(
        indices: I,
        runs: usize,
    ) -> Result<Self, ModelError> {
        let mut mask = 0u64;
        for i in indices {
            if i >= runs.min(MAX_RUNS) {
                return Err(ModelError::InvalidEnsemble { mask, runs });
            }
            mask |= 1 << i;
        }
        Self::new(mask, runs)
    }

    pub(crate) fn from_raw(mask: u64) -> Self {
        debug_assert_ne!(mask, 0);
        Self(mask)
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, index: usize) -> bool {
        index < MAX_RUNS && self.0 >> index & 1 == 1
    }

    /// Member run indices, ascending.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                return None;
            }
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(i)
        })
    }

    pub fn check(self, runs: &RunSet) -> Result<(), ModelError> {
        Self::new(self.0, runs.len()).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::new(["a", "b", "c"]).unwrap()
    }

    fn truth(ids: &[&str]) -> GroundTruth {
        GroundTruth::new(ids.iter().map(|id| (id.to_string(), 0)), 3).unwrap()
    }

    fn run(id: &str, samples: &[&str]) -> PredictionRun {
        PredictionRun::new(
            id,
            "camelbert",
            "post",
            samples.iter().map(|s| (s.to_string(), 1)).collect(),
        )
    }

    #[test]
    fn label_set_rejects_empty_and_duplicates() {
        assert_eq!(
            LabelSet::new(Vec::<String>::new()),
            Err(ModelError::EmptyLabelSet)
        );
        assert_eq!(
            LabelSet::new(["x", "y", "x"]),
            Err(ModelError::DuplicateLabel("x".into()))
        );
        let set = labels();
        assert_eq!(set.index_of("b"), Some(1));
        assert_eq!(set.index_of("B"), None);
        assert_eq!(set.index_of(" b"), None);
    }

    #[test]
    fn label_set_keeps_arabic_names() {
        let set = LabelSet::new(["باطنية", "عظام", "جراحة المخ والأعصاب"]).unwrap();
        assert_eq!(set.index_of("عظام"), Some(1));
        assert_eq!(set.name(2), Some("جراحة المخ والأعصاب"));
    }

    #[test]
    fn truth_rejects_duplicates_and_bad_labels() {
        let dup = GroundTruth::new([("s1".to_string(), 0), ("s1".to_string(), 1)], 3);
        assert_eq!(dup, Err(ModelError::DuplicateSampleId("s1".into())));
        let bad = GroundTruth::new([("s1".to_string(), 3)], 3);
        assert!(matches!(bad, Err(ModelError::TruthLabelOutOfRange { .. })));
        let empty = GroundTruth::new(Vec::new(), 3);
        assert_eq!(empty, Err(ModelError::EmptyTruth));
    }

    #[test]
    fn strict_exact_cover() {
        let t = truth(&["s1", "s2", "s3"]);
        let runs = vec![
            run("a", &["s1", "s2", "s3"]),
            run("b", &["s3", "s2", "s1"]),
            run("c", &["s2", "s1", "s3"]),
        ];
        let set = align(runs, &t, AlignMode::Strict).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.samples(), 3);
        assert_eq!(set.dropped(), 0);
    }

    #[test]
    fn strict_missing_samples() {
        let t = truth(&["s1", "s2", "s3"]);
        let err = align(vec![run("a", &["s1", "s2"])], &t, AlignMode::Strict).unwrap_err();
        assert_eq!(
            err.0,
            vec![ModelError::MissingSamples {
                run_id: "a".into(),
                count: 1
            }]
        );
    }

    #[test]
    fn strict_reports_every_violation() {
        let t = truth(&["s1", "s2", "s3"]);
        let runs = vec![run("a", &["s1", "s2"]), run("b", &["s1", "s2", "s3", "s9"])];
        let err = align(runs, &t, AlignMode::Strict).unwrap_err();
        assert_eq!(err.0.len(), 2);
        assert!(matches!(
            err.0[1],
            ModelError::UnexpectedSamples { count: 1, .. }
        ));
    }

    #[test]
    fn intersect_drops_uncovered_samples() {
        let t = truth(&["s1", "s2", "s3", "s4"]);
        let runs = vec![run("a", &["s1", "s2", "s3"]), run("b", &["s2", "s3", "s4"])];
        let set = align(runs, &t, AlignMode::Intersect).unwrap();
        assert_eq!(set.truth().sample_ids(), ["s2", "s3"]);
        assert_eq!(set.dropped(), 2);
    }

    #[test]
    fn intersect_empty() {
        let t = truth(&["s1", "s2"]);
        let runs = vec![run("a", &["s1"]), run("b", &["s2"])];
        let err = align(runs, &t, AlignMode::Intersect).unwrap_err();
        assert_eq!(err.0, vec![ModelError::EmptyIntersection]);
    }

    #[test]
    fn unknown_label_index() {
        let t = truth(&["s1"]);
        let mut r = run("a", &["s1"]);
        r.predictions["s1"] = 5;
        let err = align(vec![r], &t, AlignMode::Strict).unwrap_err();
        assert_eq!(
            err.0,
            vec![ModelError::UnknownLabel {
                run_id: "a".into(),
                sample_id: "s1".into()
            }]
        );
    }

    #[test]
    fn duplicate_run_ids() {
        let t = truth(&["s1"]);
        let err = align(
            vec![run("a", &["s1"]), run("a", &["s1"])],
            &t,
            AlignMode::Strict,
        )
        .unwrap_err();
        assert_eq!(err.0, vec![ModelError::DuplicateRunId("a".into())]);
    }

    #[test]
    fn alignment_follows_truth_order() {
        let t = GroundTruth::new([("s2".to_string(), 0), ("s1".to_string(), 1)], 3).unwrap();
        let mut r = run("a", &["s1", "s2"]);
        r.predictions["s1"] = 2;
        let set = align(vec![r], &t, AlignMode::Strict).unwrap();
        assert_eq!(set.runs()[0].labels, vec![1, 2]);
    }

    #[test]
    fn realignment_is_identity() {
        let t = truth(&["s1", "s2", "s3", "s4"]);
        let runs = vec![run("a", &["s1", "s2", "s3"]), run("b", &["s2", "s3", "s4"])];
        let set = align(runs, &t, AlignMode::Intersect).unwrap();
        for mode in [AlignMode::Strict, AlignMode::Intersect] {
            let again = align(set.to_prediction_runs(), set.truth(), mode).unwrap();
            assert_eq!(again.runs(), set.runs());
            assert_eq!(again.truth(), set.truth());
            assert_eq!(again.dropped(), 0);
        }
    }

    #[test]
    fn confidence_checks() {
        assert!(check_confidence(&[0.2, 0.2, 0.6], 2, 3).is_ok());
        assert!(check_confidence(&[0.2, 0.2, 0.5], 2, 3).is_err());
        assert!(check_confidence(&[0.2, 0.6, 0.2], 2, 3).is_err());
        assert!(check_confidence(&[0.5, 0.5], 1, 2).is_ok());
        assert!(check_confidence(&[0.5, 0.5], 1, 3).is_err());
        assert!(check_confidence(&[1.2, -0.2], 0, 2).is_err());
    }

    #[test]
    fn ensemble_spec_bounds() {
        assert!(EnsembleSpec::new(0, 3).is_err());
        assert!(EnsembleSpec::new(0b1000, 3).is_err());
        assert!(EnsembleSpec::new(0b101, 3).is_ok());
        assert_eq!(EnsembleSpec::all(64).unwrap().mask(), u64::MAX);
        assert!(EnsembleSpec::new(1, 65).is_err());
        let spec = EnsembleSpec::from_indices([4, 0, 2], 5).unwrap();
        assert_eq!(spec.members().collect::<Vec<_>>(), vec![0, 2, 4]);
        assert!(EnsembleSpec::from_indices([5], 5).is_err());
    }

    #[test]
    fn bit_index_bijection() {
        for n in 1..=MAX_RUNS {
            for i in 0..n {
                let spec = EnsembleSpec::from_indices([i], n).unwrap();
                assert_eq!(spec.members().collect::<Vec<_>>(), vec![i]);
                assert!(spec.contains(i));
            }
        }
    }
}
