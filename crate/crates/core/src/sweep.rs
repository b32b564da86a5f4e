//! Exhaustive evaluation of every size-k subset of a run set.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{accuracy, Accuracy};
use crate::model::{EnsembleSpec, RunSet, MAX_RUNS};
use crate::voting::{fuse, TiePolicy, VoteError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("ensemble size {k} is outside 1..={n}")]
    InvalidSize { k: usize, n: usize },
    #[error("top-n must be at least 1")]
    InvalidTopN,
    #[error(transparent)]
    Vote(#[from] VoteError),
}

/// `n choose k`, exact for every `n <= 64`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Size-k masks over `n` bits in ascending numeric order.
#[derive(Debug, Clone)]
pub struct Combinations {
    next: u64,
    remaining: u64,
}

impl Iterator for Combinations {
    type Item = EnsembleSpec;

    fn next(&mut self) -> Option<EnsembleSpec> {
        if self.remaining == 0 {
            return None;
        }
        let current = self.next;
        self.remaining -= 1;
        if self.remaining > 0 {
            // Gosper's hack: next larger integer with the same popcount.
            let low = current & current.wrapping_neg();
            let ripple = current.wrapping_add(low);
            self.next = (((ripple ^ current) >> 2) / low) | ripple;
        }
        Some(EnsembleSpec::from_raw(current))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, usize::try_from(self.remaining).ok())
    }
}

pub fn enumerate_combinations(n: usize, k: usize) -> Result<Combinations, SweepError> {
    if k == 0 || k > n || n > MAX_RUNS {
        return Err(SweepError::InvalidSize { k, n });
    }
    let first = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    Ok(Combinations {
        next: first,
        remaining: binomial(n, k),
    })
}

/// One evaluated ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scored {
    pub ensemble: EnsembleSpec,
    pub accuracy: Accuracy,
    pub ties: usize,
}

fn rank(scored: &mut [Scored]) {
    scored.sort_by(|a, b| {
        b.accuracy
            .cmp(&a.accuracy)
            .then(a.ensemble.mask().cmp(&b.ensemble.mask()))
    });
}

pub fn evaluate(
    ensemble: EnsembleSpec,
    runs: &RunSet,
    policy: TiePolicy,
) -> Result<Scored, VoteError> {
    let fusion = fuse(ensemble, runs, policy)?;
    let accuracy = accuracy(&fusion.labels, runs.truth().labels())
        .expect("aligned run set has a non-empty truth of matching length");
    Ok(Scored {
        ensemble,
        accuracy,
        ties: fusion.ties,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRow {
    pub run_id: String,
    pub accuracy: Accuracy,
}

/// Accuracy of every run on its own, in run-set order.
pub fn individual_table(runs: &RunSet) -> Vec<IndividualRow> {
    runs.runs()
        .iter()
        .map(|run| IndividualRow {
            run_id: run.run_id.clone(),
            accuracy: accuracy(
                &run.labels.iter().copied().map(Some).collect::<Vec<_>>(),
                runs.truth().labels(),
            )
            .expect("aligned run set has a non-empty truth of matching length"),
        })
        .collect()
}

/// Ranked results for one ensemble size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub size: usize,
    pub policy: TiePolicy,
    /// Number of combinations evaluated, `C(n, size)`.
    pub total: u64,
    /// Best `top_n` combinations by accuracy descending, then mask ascending.
    pub ranked: Vec<Scored>,
}

impl SweepReport {
    pub fn best(&self) -> &Scored {
        &self.ranked[0]
    }
}

pub fn sweep_size(
    runs: &RunSet,
    k: usize,
    policy: TiePolicy,
    top_n: usize,
) -> Result<SweepReport, SweepError> {
    if top_n == 0 {
        return Err(SweepError::InvalidTopN);
    }
    let combos = enumerate_combinations(runs.len(), k)?;
    let total = binomial(runs.len(), k);
    let masks: Vec<EnsembleSpec> = combos.collect();
    // Results come back in enumeration order whatever the scheduling.
    let mut scored = masks
        .into_par_iter()
        .map(|spec| evaluate(spec, runs, policy))
        .collect::<Result<Vec<_>, _>>()?;
    rank(&mut scored);
    scored.truncate(top_n);
    Ok(SweepReport {
        size: k,
        policy,
        total,
        ranked: scored,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestEntry {
    pub size: usize,
    pub best: Scored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAll {
    pub best_per_size: Vec<BestEntry>,
    pub total_evaluations: u64,
    pub reports: Vec<SweepReport>,
}

pub fn sweep_all(
    runs: &RunSet,
    sizes: RangeInclusive<usize>,
    policy: TiePolicy,
    top_n: usize,
) -> Result<SweepAll, SweepError> {
    let n = runs.len();
    if sizes.is_empty() || *sizes.start() == 0 || *sizes.end() > n {
        return Err(SweepError::InvalidSize {
            k: if *sizes.start() == 0 { 0 } else { *sizes.end() },
            n,
        });
    }
    let reports = sizes
        .map(|k| sweep_size(runs, k, policy, top_n))
        .collect::<Result<Vec<_>, _>>()?;
    let best_per_size = reports
        .iter()
        .map(|r| BestEntry {
            size: r.size,
            best: *r.best(),
        })
        .collect();
    Ok(SweepAll {
        best_per_size,
        total_evaluations: reports.iter().map(|r| r.total).sum(),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{align, AlignMode, GroundTruth, PredictionRun};

    fn run_set(preds: &[Vec<usize>], truth: &[usize], classes: usize) -> RunSet {
        let t = GroundTruth::new(
            truth.iter().enumerate().map(|(i, &l)| (format!("s{i}"), l)),
            classes,
        )
        .unwrap();
        let runs = preds
            .iter()
            .enumerate()
            .map(|(r, p)| {
                PredictionRun::new(
                    format!("r{r}"),
                    "f",
                    "post",
                    p.iter()
                        .enumerate()
                        .map(|(i, &l)| (format!("s{i}"), l))
                        .collect(),
                )
            })
            .collect();
        align(runs, &t, AlignMode::Strict).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(12, 3), 220);
        assert_eq!(binomial(12, 6), 924);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn small_enumeration() {
        let masks: Vec<u64> = enumerate_combinations(3, 2)
            .unwrap()
            .map(|s| s.mask())
            .collect();
        assert_eq!(masks, vec![0b011, 0b101, 0b110]);
        assert_eq!(enumerate_combinations(12, 3).unwrap().count(), 220);
        assert_eq!(enumerate_combinations(12, 6).unwrap().count(), 924);
    }

    #[test]
    fn enumeration_edges() {
        assert!(enumerate_combinations(3, 0).is_err());
        assert!(enumerate_combinations(3, 4).is_err());
        assert!(enumerate_combinations(65, 1).is_err());
        let full: Vec<u64> = enumerate_combinations(64, 64)
            .unwrap()
            .map(|s| s.mask())
            .collect();
        assert_eq!(full, vec![u64::MAX]);
        let last = enumerate_combinations(64, 1).unwrap().last().unwrap();
        assert_eq!(last.mask(), 1 << 63);
        let tail = enumerate_combinations(64, 63).unwrap().last().unwrap();
        assert_eq!(tail.mask(), u64::MAX - 1);
    }

    #[test]
    fn counts_match_binomials_exhaustively() {
        for n in 1..=16 {
            for k in 1..=n {
                let masks: Vec<u64> = enumerate_combinations(n, k)
                    .unwrap()
                    .map(|s| s.mask())
                    .collect();
                assert_eq!(masks.len() as u64, binomial(n, k));
                assert!(masks.windows(2).all(|w| w[0] < w[1]));
                assert!(masks
                    .iter()
                    .all(|m| m.count_ones() as usize == k && m >> n == 0));
            }
        }
    }

    #[test]
    fn full_size_is_single_combination() {
        let set = run_set(&[vec![0, 1], vec![1, 1], vec![0, 0]], &[0, 1], 2);
        let report = sweep_size(&set, 3, TiePolicy::LowestLabel, 10).unwrap();
        assert_eq!(report.total, 1);
        assert_eq!(report.ranked.len(), 1);
        assert_eq!(report.best().ensemble.mask(), 0b111);
    }

    #[test]
    fn perfect_run_tops_size_one() {
        let truth = [0, 1, 2, 1];
        let set = run_set(
            &[vec![0, 0, 0, 0], truth.to_vec(), vec![2, 1, 0, 1]],
            &truth,
            3,
        );
        let report = sweep_size(&set, 1, TiePolicy::LowestLabel, 10).unwrap();
        assert_eq!(report.best().accuracy, Accuracy::new(1, 1));
        assert_eq!(report.best().ensemble.mask(), 0b010);
    }

    #[test]
    fn ranking_breaks_ties_by_mask() {
        let truth = [0, 1];
        let set = run_set(&[vec![0, 0], vec![0, 0], truth.to_vec()], &truth, 2);
        let report = sweep_size(&set, 1, TiePolicy::LowestLabel, 10).unwrap();
        let masks: Vec<u64> = report.ranked.iter().map(|s| s.ensemble.mask()).collect();
        assert_eq!(masks, vec![0b100, 0b001, 0b010]);
        let top1 = sweep_size(&set, 1, TiePolicy::LowestLabel, 1).unwrap();
        assert_eq!(top1.ranked.len(), 1);
        assert_eq!(top1.total, 3);
    }

    #[test]
    fn invalid_arguments() {
        let set = run_set(&[vec![0], vec![1]], &[0], 2);
        assert_eq!(
            sweep_size(&set, 3, TiePolicy::LowestLabel, 1),
            Err(SweepError::InvalidSize { k: 3, n: 2 })
        );
        assert_eq!(
            sweep_size(&set, 1, TiePolicy::LowestLabel, 0),
            Err(SweepError::InvalidTopN)
        );
        assert!(sweep_all(&set, 0..=2, TiePolicy::LowestLabel, 1).is_err());
        assert!(sweep_all(&set, 1..=3, TiePolicy::LowestLabel, 1).is_err());
    }

    #[test]
    fn individual_table_matches_size_one_sweep() {
        let truth = [0, 1, 2, 1, 0];
        let preds = vec![
            vec![0, 1, 1, 1, 0],
            vec![2, 2, 2, 1, 0],
            vec![0, 0, 0, 0, 0],
        ];
        let set = run_set(&preds, &truth, 3);
        let table = individual_table(&set);
        assert_eq!(table.len(), 3);
        for (i, row) in table.iter().enumerate() {
            let spec = EnsembleSpec::from_indices([i], 3).unwrap();
            assert_eq!(
                row.accuracy,
                evaluate(spec, &set, TiePolicy::LowestLabel)
                    .unwrap()
                    .accuracy
            );
        }
        let all = sweep_all(&set, 1..=1, TiePolicy::LowestLabel, 10).unwrap();
        let max = table.iter().map(|r| r.accuracy).max().unwrap();
        assert_eq!(all.best_per_size[0].best.accuracy, max);
    }

    #[test]
    fn total_evaluations_for_twelve_runs() {
        let preds: Vec<Vec<usize>> = (0..12).map(|r| vec![r % 3, (r + 1) % 3]).collect();
        let set = run_set(&preds, &[0, 1], 3);
        let all = sweep_all(&set, 2..=12, TiePolicy::LowestLabel, 3).unwrap();
        assert_eq!(all.total_evaluations, 4083);
        assert_eq!(all.best_per_size.len(), 11);
        for (entry, report) in all.best_per_size.iter().zip(&all.reports) {
            assert_eq!(entry.best, report.ranked[0]);
        }
    }

    #[test]
    fn duplicating_every_member_leaves_fusion_unchanged() {
        let truth = [0, 1, 2, 0, 1, 2];
        let base = vec![
            vec![0, 1, 2, 2, 1, 0],
            vec![1, 1, 0, 0, 2, 2],
            vec![0, 2, 2, 0, 0, 1],
        ];
        let doubled: Vec<_> = base.iter().chain(&base).cloned().collect();
        let set = run_set(&doubled, &truth, 3);
        for policy in [
            TiePolicy::LowestLabel,
            TiePolicy::Priority,
            TiePolicy::Abstain,
        ] {
            let once = fuse(EnsembleSpec::new(0b000111, 6).unwrap(), &set, policy).unwrap();
            let twice = fuse(EnsembleSpec::new(0b111111, 6).unwrap(), &set, policy).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn two_copies_of_one_member_can_flip_a_sample() {
        // Votes (0, 1, 1) elect 1; two more copies of the first member elect 0.
        let set = run_set(&[vec![0], vec![1], vec![1], vec![0], vec![0]], &[0], 2);
        let base = fuse(
            EnsembleSpec::new(0b00111, 5).unwrap(),
            &set,
            TiePolicy::LowestLabel,
        )
        .unwrap();
        let padded = fuse(
            EnsembleSpec::new(0b11111, 5).unwrap(),
            &set,
            TiePolicy::LowestLabel,
        )
        .unwrap();
        assert_eq!(base.labels, vec![Some(1)]);
        assert_eq!(padded.labels, vec![Some(0)]);
    }
}
