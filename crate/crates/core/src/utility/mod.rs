//! Subsample-and-aggregate utility estimation.
//!
//! The training set is split into `k` disjoint partitions by hashing record
//! ids, each candidate is trained once per partition, and its utility is the
//! unweighted mean of the per-partition validation accuracies. Adding or
//! removing one record touches exactly one partition, and every partition
//! scores in [0, 1], so a candidate's utility moves by at most `1/k`.

mod dataset;
mod trainer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, Label, Record};
pub use trainer::{
    accuracy, Candidate, CentroidModel, Classifier, ConstantTrainer, FnTrainer, NearestCentroid,
    SyntheticTrainer, Trainer, TrainerError, TrainerSpec,
};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{mix64, RandomStream};

/// Partition a record with this id falls into, out of `k`.
///
/// Depends on nothing but the id and `k`, so the assignment of a record
/// never changes when other records come or go.
pub fn partition_index(id: u64, k: usize) -> usize {
    assert!(k > 0, "k must be positive");
    (mix64(id) % k as u64) as usize
}

/// Disjoint hash partitioning of a dataset into `k` parts (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioning {
    k: usize,
    /// Record positions in the dataset, per partition.
    members: Vec<Vec<usize>>,
    ids: Vec<u64>,
}

impl Partitioning {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Partition of record `id`, if it is in the partitioned dataset.
    pub fn assignment(&self, id: u64) -> Option<usize> {
        self.ids
            .binary_search(&id)
            .ok()
            .map(|_| partition_index(id, self.k))
    }

    /// Positions (into the dataset's record slice) of partition `i`.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn empty_partitions(&self) -> Vec<usize> {
        (0..self.k)
            .filter(|&i| self.members[i].is_empty())
            .collect()
    }
}

/// Hash-partitions `data` into `k` disjoint parts.
///
/// An empty partition is not an error: it is logged and later scores 0.
pub fn partition(data: &Dataset, k: usize) -> Result<Partitioning> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    if k > data.len() {
        return Err(invalid(
            "k",
            format!("{k} partitions requested for {} records", data.len()),
        ));
    }
    let mut members = vec![Vec::new(); k];
    for (pos, r) in data.records().iter().enumerate() {
        members[partition_index(r.id, k)].push(pos);
    }
    let mut ids: Vec<u64> = data.records().iter().map(|r| r.id).collect();
    ids.sort_unstable();
    let parts = Partitioning { k, members, ids };
    let empty = parts.empty_partitions();
    if !empty.is_empty() {
        log::warn!(
            "degenerate partitioning: partitions {empty:?} of {k} are empty and will score 0"
        );
    }
    Ok(parts)
}

/// Scores for one candidate: one accuracy per partition and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub per_partition: Vec<f64>,
    pub utility: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn score_partition<T: Trainer + ?Sized>(
    trainer: &T,
    data: &Dataset,
    parts: &Partitioning,
    i: usize,
    candidate: &Candidate,
    valid: &Dataset,
    mut stream: RandomStream,
) -> f64 {
    let records: Vec<&Record> = parts
        .members(i)
        .iter()
        .map(|&p| &data.records()[p])
        .collect();
    match trainer.partition_accuracy(&records, candidate, valid, &mut stream) {
        Ok(acc) if (0.0..=1.0).contains(&acc) => acc,
        Ok(acc) => {
            log::warn!(
                "candidate {candidate:?}, partition {i}: accuracy {acc} outside [0, 1]; scoring 0"
            );
            0.0
        }
        Err(e) => {
            log::warn!("candidate {candidate:?}, partition {i}: trainer failed ({e}); scoring 0");
            0.0
        }
    }
}

fn check_compatible(data: &Dataset, valid: &Dataset) -> Result<()> {
    if data.dim() != valid.dim() {
        return Err(Error::InvalidDataset(format!(
            "training set has {} features but validation set has {}",
            data.dim(),
            valid.dim()
        )));
    }
    Ok(())
}

/// Trains `candidate` once per partition (partition `i` on its own records
/// only, with stream `stream.substream(i)`) and averages the accuracies.
/// A failing partition scores 0.
pub fn evaluate_candidate<T: Trainer + ?Sized>(
    trainer: &T,
    data: &Dataset,
    parts: &Partitioning,
    candidate: &Candidate,
    valid: &Dataset,
    stream: &RandomStream,
) -> Result<CandidateScore> {
    check_compatible(data, valid)?;
    let per_partition: Vec<f64> = (0..parts.k())
        .map(|i| {
            score_partition(
                trainer,
                data,
                parts,
                i,
                candidate,
                valid,
                stream.substream(i as u64),
            )
        })
        .collect();
    let utility = mean(&per_partition);
    Ok(CandidateScore {
        per_partition,
        utility,
    })
}

/// Per-candidate, per-partition accuracies and per-candidate means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    k: usize,
    per_partition: Vec<Vec<f64>>,
    per_candidate: Vec<f64>,
}

impl UtilityTable {
    /// Table from raw per-partition scores; each row must have `k` entries
    /// in [0, 1].
    pub fn from_partition_scores(k: usize, per_partition: Vec<Vec<f64>>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        for (s, row) in per_partition.iter().enumerate() {
            if row.len() != k {
                return Err(invalid(
                    "per_partition",
                    format!("row {s} has {} entries, expected {k}", row.len()),
                ));
            }
            if let Some(bad) = row.iter().find(|u| !(0.0..=1.0).contains(*u)) {
                return Err(invalid(
                    "per_partition",
                    format!("row {s} has utility {bad} outside [0, 1]"),
                ));
            }
        }
        let per_candidate = per_partition.iter().map(|row| mean(row)).collect();
        Ok(Self {
            k,
            per_partition,
            per_candidate,
        })
    }

    /// Table whose candidate utilities are given directly, with every
    /// partition scoring the candidate's utility. Used when utilities are
    /// simulated rather than trained.
    pub fn from_utilities(k: usize, utilities: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if let Some(bad) = utilities.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(invalid(
                "utilities",
                format!("utility {bad} outside [0, 1]"),
            ));
        }
        let per_partition = utilities.iter().map(|&u| vec![u; k]).collect();
        Ok(Self {
            k,
            per_partition,
            per_candidate: utilities,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.per_candidate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_candidate.is_empty()
    }

    pub fn per_partition(&self) -> &[Vec<f64>] {
        &self.per_partition
    }

    pub fn utilities(&self) -> &[f64] {
        &self.per_candidate
    }

    /// Best candidate utility, if any.
    pub fn max_utility(&self) -> Option<f64> {
        self.per_candidate.iter().copied().reduce(f64::max)
    }
}

/// Scores every candidate. Cell `(s, i)` uses stream
/// `stream.substream(s).substream(i)`, so results do not depend on
/// evaluation order and cells run in parallel.
pub fn build_utility_table<T: Trainer + ?Sized>(
    trainer: &T,
    data: &Dataset,
    valid: &Dataset,
    k: usize,
    candidates: &[Candidate],
    stream: &RandomStream,
) -> Result<UtilityTable> {
    check_compatible(data, valid)?;
    let parts = partition(data, k)?;
    let cells: Vec<f64> = (0..candidates.len() * k)
        .into_par_iter()
        .map(|cell| {
            let (s, i) = (cell / k, cell % k);
            let cell_stream = stream.substream(s as u64).substream(i as u64);
            score_partition(trainer, data, &parts, i, &candidates[s], valid, cell_stream)
        })
        .collect();
    let rows = cells.chunks(k).map(<[f64]>::to_vec).collect();
    UtilityTable::from_partition_scores(k, rows)
}
