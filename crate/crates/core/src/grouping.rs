//! Ensembles formed from every run sharing a representation or family tag.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::metrics::{evaluate, MetricsBundle};
use crate::model::{EnsembleSpec, RunSet};
use crate::voting::{fuse, TiePolicy, VoteError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Representation,
    Family,
}

impl GroupKey {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Representation => "representation",
            GroupKey::Family => "family",
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "representation" => Ok(GroupKey::Representation),
            "family" => Ok(GroupKey::Family),
            _ => Err(format!("unknown group key {s:?}")),
        }
    }
}

/// Partitions the runs by tag. Tags appear in order of first occurrence.
pub fn group_runs(runs: &RunSet, key: GroupKey) -> Vec<(String, EnsembleSpec)> {
    let mut masks: IndexMap<&str, u64> = IndexMap::new();
    for (i, run) in runs.runs().iter().enumerate() {
        let tag = match key {
            GroupKey::Representation => run.representation.as_str(),
            GroupKey::Family => run.family.as_str(),
        };
        *masks.entry(tag).or_default() |= 1 << i;
    }
    masks
        .into_iter()
        .map(|(tag, mask)| (tag.to_owned(), EnsembleSpec::from_raw(mask)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub tag: String,
    pub ensemble: EnsembleSpec,
    pub members: Vec<String>,
    pub metrics: MetricsBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub key: GroupKey,
    pub policy: TiePolicy,
    pub groups: Vec<GroupResult>,
}

pub fn evaluate_groups(
    runs: &RunSet,
    key: GroupKey,
    policy: TiePolicy,
) -> Result<GroupReport, VoteError> {
    let groups = group_runs(runs, key)
        .into_par_iter()
        .map(|(tag, ensemble)| {
            let fusion = fuse(ensemble, runs, policy)?;
            let metrics = evaluate(&fusion, runs.truth().labels(), runs.classes())
                .expect("aligned run set has a non-empty truth of matching length");
            Ok(GroupResult {
                members: ensemble
                    .members()
                    .map(|i| runs.runs()[i].run_id.clone())
                    .collect(),
                tag,
                ensemble,
                metrics,
            })
        })
        .collect::<Result<Vec<_>, VoteError>>()?;
    Ok(GroupReport {
        key,
        policy,
        groups,
    })
}
