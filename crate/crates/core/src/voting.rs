//! Hard majority voting: per-sample tallies and tie resolution.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EnsembleSpec, ModelError, RunSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VoteError {
    #[error("tie policy highest-confidence needs confidences, but run {run_id:?} has none")]
    MissingConfidence { run_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Resolution rule for samples where several classes share the top vote count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Smallest tied label index wins.
    #[default]
    LowestLabel,
    /// The tied class voted by the lowest-indexed member wins.
    Priority,
    /// Tied class with the greatest mean member confidence wins; equal means
    /// fall back to the smallest label index.
    HighestConfidence,
    /// Tied samples get no prediction and are scored as wrong.
    Abstain,
}

impl TiePolicy {
    pub const ALL: [TiePolicy; 4] = [
        TiePolicy::LowestLabel,
        TiePolicy::Priority,
        TiePolicy::HighestConfidence,
        TiePolicy::Abstain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TiePolicy::LowestLabel => "lowest-label",
            TiePolicy::Priority => "priority",
            TiePolicy::HighestConfidence => "highest-confidence",
            TiePolicy::Abstain => "abstain",
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TiePolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown tie policy {s:?}"))
    }
}

/// One member's vote on a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ballot<'a> {
    pub run_index: usize,
    pub label: usize,
    pub confidence: Option<&'a [f64]>,
}

/// Every ballot cast on one sample, ordered by ascending run index.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteContext<'a> {
    pub sample_id: &'a str,
    pub ballots: Vec<Ballot<'a>>,
}

/// Result of voting on one sample. `label` is `None` on abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub label: Option<usize>,
    pub tied: bool,
}

/// Tally of `votes` over `classes` labels. Callers guarantee every vote is in range.
pub fn vote_counts(votes: &[usize], classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; classes];
    for &v in votes {
        counts[v] += 1;
    }
    counts
}

pub fn majority_vote(
    ctx: &VoteContext<'_>,
    classes: usize,
    policy: TiePolicy,
) -> Result<Decision, VoteError> {
    debug_assert!(ctx
        .ballots
        .windows(2)
        .all(|w| w[0].run_index < w[1].run_index));
    if policy == TiePolicy::HighestConfidence {
        if let Some(b) = ctx.ballots.iter().find(|b| b.confidence.is_none()) {
            return Err(VoteError::MissingConfidence {
                run_id: format!("#{}", b.run_index),
            });
        }
    }
    let votes: Vec<usize> = ctx.ballots.iter().map(|b| b.label).collect();
    let counts = vote_counts(&votes, classes);
    Ok(resolve(&counts, &ctx.ballots, policy))
}

/// Picks a winner from a finished tally.
fn resolve(counts: &[u32], ballots: &[Ballot<'_>], policy: TiePolicy) -> Decision {
    let top = counts.iter().copied().max().unwrap_or(0);
    let first = counts.iter().position(|&c| c == top).unwrap_or(0);
    let tied = counts[first + 1..].contains(&top);
    if !tied {
        return Decision {
            label: Some(first),
            tied,
        };
    }
    let label = match policy {
        TiePolicy::LowestLabel => Some(first),
        TiePolicy::Priority => ballots.iter().map(|b| b.label).find(|&l| counts[l] == top),
        TiePolicy::HighestConfidence => {
            let n = ballots.len() as f64;
            let mut best: Option<(usize, f64)> = None;
            for class in (0..counts.len()).filter(|&c| counts[c] == top) {
                let mean = ballots
                    .iter()
                    .map(|b| b.confidence.map_or(0.0, |c| c[class]))
                    .sum::<f64>()
                    / n;
                if best.is_none_or(|(_, m)| mean > m) {
                    best = Some((class, mean));
                }
            }
            best.map(|(class, _)| class)
        }
        TiePolicy::Abstain => None,
    };
    Decision { label, tied }
}

/// Per-sample fused labels of one ensemble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fusion {
    pub labels: Vec<Option<usize>>,
    /// Samples whose top vote count was shared by two or more classes.
    pub ties: usize,
}

impl Fusion {
    pub fn abstentions(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Fuses the members of `ensemble` sample by sample.
pub fn fuse<'r>(
    ensemble: EnsembleSpec,
    runs: &'r RunSet,
    policy: TiePolicy,
) -> Result<Fusion, VoteError> {
    ensemble.check(runs)?;
    let members: Vec<usize> = ensemble.members().collect();
    if policy == TiePolicy::HighestConfidence {
        if let Some(&i) = members
            .iter()
            .find(|&&i| runs.runs()[i].confidences.is_none())
        {
            return Err(VoteError::MissingConfidence {
                run_id: runs.runs()[i].run_id.clone(),
            });
        }
    }
    let classes = runs.classes();
    let decide = |sample: usize, counts: &mut Vec<u32>, ballots: &mut Vec<Ballot<'r>>| {
        counts.clear();
        counts.resize(classes, 0);
        for &i in &members {
            counts[runs.runs()[i].labels[sample]] += 1;
        }
        // Ballots only matter when a tie has to be broken.
        ballots.clear();
        if matches!(policy, TiePolicy::Priority | TiePolicy::HighestConfidence) {
            let top = counts.iter().copied().max().unwrap_or(0);
            if counts.iter().filter(|&&c| c == top).count() > 1 {
                ballots.extend(members.iter().map(|&i| {
                    let run = &runs.runs()[i];
                    Ballot {
                        run_index: i,
                        label: run.labels[sample],
                        confidence: run.confidences.as_ref().map(|c| c[sample].as_slice()),
                    }
                }));
            }
        }
        resolve(counts, ballots, policy)
    };

    let samples = runs.samples();
    let decisions: Vec<Decision> = if samples >= PARALLEL_SAMPLES {
        (0..samples)
            .into_par_iter()
            .map_init(
                || {
                    (
                        Vec::with_capacity(classes),
                        Vec::with_capacity(members.len()),
                    )
                },
                |(counts, ballots), s| decide(s, counts, ballots),
            )
            .collect()
    } else {
        let mut counts = Vec::with_capacity(classes);
        let mut ballots = Vec::with_capacity(members.len());
        (0..samples)
            .map(|s| decide(s, &mut counts, &mut ballots))
            .collect()
    };

    Ok(Fusion {
        ties: decisions.iter().filter(|d| d.tied).count(),
        labels: decisions.into_iter().map(|d| d.label).collect(),
    })
}

// Below this many samples a single thread beats rayon's overhead.
const PARALLEL_SAMPLES: usize = 4096;
