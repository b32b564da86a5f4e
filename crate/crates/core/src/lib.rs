//! Majority-voting ensemble evaluation over classifier prediction runs.
//!
//! Runs are loaded and checked by [`ingest`], aligned into a [`model::RunSet`],
//! fused by [`voting`], scored by [`metrics`], searched exhaustively by
//! [`sweep`] or grouped by tag in [`grouping`], and rendered by [`report`].

pub mod cli;
pub mod grouping;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sweep;
pub mod voting;

pub use grouping::{evaluate_groups, group_runs, GroupKey, GroupReport};
pub use ingest::{
    load_manifest, load_project, load_run, load_truth, IngestError, Manifest, Project,
};
pub use metrics::{accuracy, confusion, per_class, Accuracy, ConfusionMatrix, MetricsBundle};
pub use model::{align, AlignMode, EnsembleSpec, GroundTruth, LabelSet, PredictionRun, RunSet};
pub use report::{emit, emit_plot_data, emit_run, Format, Payload, ReportDocument};
pub use sweep::{enumerate_combinations, individual_table, sweep_all, sweep_size, SweepReport};
pub use voting::{fuse, majority_vote, vote_counts, Fusion, TiePolicy};
