//! Seeded instance generators and brute-force oracles shared by the
//! integration suites. The oracles work on plain vectors and never call into
//! the library's voting, metrics or sweep code.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use ensemble_vote::model::{align, AlignMode, GroundTruth, PredictionRun, RunSet};
use ensemble_vote::TiePolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/grid12")
}

/// Raw instance: `preds[run][sample]`, `confs[run][sample][class]`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub classes: usize,
    pub truth: Vec<usize>,
    pub preds: Vec<Vec<usize>>,
    pub confs: Vec<Vec<Vec<f64>>>,
}

/// Confidence vector whose maximum sits on `label`. Entries come from a
/// coarse grid so equal means across classes happen regularly.
pub fn coarse_confidence(rng: &mut impl Rng, label: usize, classes: usize) -> Vec<f64> {
    let mut weights: Vec<u32> = (0..classes).map(|_| rng.gen_range(1..=4)).collect();
    let top = *weights.iter().max().unwrap();
    weights[label] = top + rng.gen_range(0..=1);
    let sum: u32 = weights.iter().sum();
    weights.iter().map(|&w| w as f64 / sum as f64).collect()
}

impl Instance {
    pub fn random(seed: u64, runs: usize, samples: usize, classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..classes)).collect();
        let mut preds = Vec::new();
        let mut confs = Vec::new();
        for _ in 0..runs {
            let skill: f64 = rng.gen_range(0.3..0.85);
            let p: Vec<usize> = truth
                .iter()
                .map(|&t| {
                    if rng.gen::<f64>() < skill {
                        t
                    } else {
                        rng.gen_range(0..classes)
                    }
                })
                .collect();
            confs.push(
                p.iter()
                    .map(|&l| coarse_confidence(&mut rng, l, classes))
                    .collect(),
            );
            preds.push(p);
        }
        Self {
            classes,
            truth,
            preds,
            confs,
        }
    }

    pub fn run_ids(&self) -> Vec<String> {
        (0..self.preds.len())
            .map(|r| format!("run{r:02}"))
            .collect()
    }

    pub fn run_set(&self) -> RunSet {
        self.run_set_tagged(|_| ("family".into(), "post".into()))
    }

    pub fn run_set_tagged(&self, tags: impl Fn(usize) -> (String, String)) -> RunSet {
        let sid = |i: usize| format!("s{i:04}");
        let truth = GroundTruth::new(
            self.truth.iter().enumerate().map(|(i, &l)| (sid(i), l)),
            self.classes,
        )
        .unwrap();
        let runs = self
            .preds
            .iter()
            .zip(&self.confs)
            .zip(self.run_ids())
            .enumerate()
            .map(|(r, ((p, c), id))| {
                let (family, repr) = tags(r);
                PredictionRun::new(
                    id,
                    family,
                    repr,
                    p.iter().enumerate().map(|(i, &l)| (sid(i), l)).collect(),
                )
                .with_confidences(
                    c.iter()
                        .enumerate()
                        .map(|(i, v)| (sid(i), v.clone()))
                        .collect(),
                )
            })
            .collect();
        align(runs, &truth, AlignMode::Strict).unwrap()
    }
}

/// Count, find the maximal classes, then apply the policy.
/// `votes[j]` is member j's label, members in ascending run order.
pub fn oracle_vote(
    votes: &[usize],
    confs: Option<&[&[f64]]>,
    classes: usize,
    policy: TiePolicy,
) -> (Option<usize>, bool) {
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in votes {
        *tally.entry(v).or_insert(0) += 1;
    }
    let best = tally.values().copied().max().unwrap();
    let winners: Vec<usize> = tally
        .iter()
        .filter(|(_, &c)| c == best)
        .map(|(&l, _)| l)
        .collect();
    if winners.len() == 1 {
        return (Some(winners[0]), false);
    }
    let pick = match policy {
        TiePolicy::LowestLabel => Some(*winners.iter().min().unwrap()),
        TiePolicy::Priority => votes.iter().copied().find(|v| winners.contains(v)),
        TiePolicy::HighestConfidence => {
            let confs = confs.expect("confidences required");
            let means: Vec<(usize, f64)> = winners
                .iter()
                .map(|&class| {
                    let mut total = 0.0;
                    for c in confs {
                        total += c[class];
                    }
                    (class, total / votes.len() as f64)
                })
                .collect();
            let top = means.iter().map(|m| m.1).fold(f64::MIN, f64::max);
            means.iter().filter(|m| m.1 == top).map(|m| m.0).min()
        }
        TiePolicy::Abstain => None,
    };
    let _ = classes;
    (pick, true)
}

/// Accuracy of the ensemble `mask` recomputed from scratch.
pub fn oracle_accuracy(inst: &Instance, mask: u64, policy: TiePolicy) -> (usize, f64) {
    let members: Vec<usize> = (0..inst.preds.len())
        .filter(|r| mask >> r & 1 == 1)
        .collect();
    let mut correct = 0;
    for (s, &t) in inst.truth.iter().enumerate() {
        let votes: Vec<usize> = members.iter().map(|&r| inst.preds[r][s]).collect();
        let confs: Vec<&[f64]> = members
            .iter()
            .map(|&r| inst.confs[r][s].as_slice())
            .collect();
        let (label, _) = oracle_vote(&votes, Some(&confs), inst.classes, policy);
        if label == Some(t) {
            correct += 1;
        }
    }
    (correct, correct as f64 / inst.truth.len() as f64)
}

/// Every size-k subset ranked by accuracy descending then mask ascending,
/// found by scanning all 2^n masks.
pub fn oracle_ranking(inst: &Instance, k: usize, policy: TiePolicy) -> Vec<(u64, f64)> {
    let n = inst.preds.len();
    let mut all: Vec<(u64, usize, f64)> = (1u64..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| {
            let (correct, acc) = oracle_accuracy(inst, m, policy);
            (m, correct, acc)
        })
        .collect();
    all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    all.into_iter().map(|(m, _, acc)| (m, acc)).collect()
}
