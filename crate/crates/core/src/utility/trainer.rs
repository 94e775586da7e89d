//! Trainers that score one candidate on one partition.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{Dataset, Label, Record};
use crate::mechanisms::RandomStream;

/// Opaque hyperparameter value. The framework never interprets it; only the
/// trainer does.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate(String);

impl Candidate {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Candidate {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct TrainerError(pub String);

pub trait Classifier {
    fn predict(&self, features: &[f64]) -> Label;
}

/// Fraction of `valid` that `model` labels correctly.
pub fn accuracy(model: &dyn Classifier, valid: &Dataset) -> f64 {
    let correct = valid
        .records()
        .iter()
        .filter(|r| model.predict(&r.features) == r.label)
        .count();
    correct as f64 / valid.len() as f64
}

/// Trains on one partition and reports validation accuracy in [0, 1].
///
/// Must be deterministic given its inputs and the stream.
pub trait Trainer: Send + Sync {
    fn partition_accuracy(
        &self,
        train: &[&Record],
        candidate: &Candidate,
        valid: &Dataset,
        stream: &mut RandomStream,
    ) -> Result<f64, TrainerError>;
}

/// Per-class feature means; predicts the class whose mean is nearest in
/// Euclidean distance. Ties go to the smaller label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub centroids: Vec<(Label, Vec<f64>)>,
}

impl CentroidModel {
    pub fn fit(train: &[&Record]) -> Option<Self> {
        let dim = train.first()?.features.len();
        let mut sums: BTreeMap<Label, (Vec<f64>, usize)> = BTreeMap::new();
        for r in train {
            let (sum, n) = sums.entry(r.label).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, x) in sum.iter_mut().zip(&r.features) {
                *s += x;
            }
            *n += 1;
        }
        let centroids = sums
            .into_iter()
            .map(|(label, (sum, n))| (label, sum.into_iter().map(|s| s / n as f64).collect()))
            .collect();
        Some(Self { centroids })
    }
}

impl Classifier for CentroidModel {
    fn predict(&self, features: &[f64]) -> Label {
        let mut best = (f64::INFINITY, Label::MIN);
        for (label, c) in &self.centroids {
            let d2: f64 = c.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, *label);
            }
        }
        best.1
    }
}

/// Non-private nearest-centroid reference trainer. Ignores the candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestCentroid;

impl Trainer for NearestCentroid {
    fn partition_accuracy(
        &self,
        train: &[&Record],
        _candidate: &Candidate,
        valid: &Dataset,
        _stream: &mut RandomStream,
    ) -> Result<f64, TrainerError> {
        let model =
            CentroidModel::fit(train).ok_or_else(|| TrainerError("empty partition".into()))?;
        Ok(accuracy(&model, valid))
    }
}

/// Always predicts one label.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTrainer(pub Label);

impl Classifier for ConstantTrainer {
    fn predict(&self, _features: &[f64]) -> Label {
        self.0
    }
}

impl Trainer for ConstantTrainer {
    fn partition_accuracy(
        &self,
        _train: &[&Record],
        _candidate: &Candidate,
        valid: &Dataset,
        _stream: &mut RandomStream,
    ) -> Result<f64, TrainerError> {
        Ok(accuracy(self, valid))
    }
}

/// Table-driven trainer: every partition scores the candidate's tabulated
/// utility. Candidates missing from the table are parsed as a number.
#[derive(Debug, Clone, Default)]
pub struct SyntheticTrainer {
    table: BTreeMap<Candidate, f64>,
}

impl SyntheticTrainer {
    pub fn new(table: BTreeMap<Candidate, f64>) -> Self {
        Self { table }
    }
}

impl Trainer for SyntheticTrainer {
    fn partition_accuracy(
        &self,
        _train: &[&Record],
        candidate: &Candidate,
        _valid: &Dataset,
        _stream: &mut RandomStream,
    ) -> Result<f64, TrainerError> {
        match self.table.get(candidate) {
            Some(u) => Ok(*u),
            None => candidate.as_str().trim().parse::<f64>().map_err(|_| {
                TrainerError(format!("no synthetic utility for candidate {candidate:?}"))
            }),
        }
    }
}

/// Adapts a closure into a [`Trainer`]; this is the hook for plugging in an
/// external (possibly private) training routine.
pub struct FnTrainer<F>(pub F);

impl<F> Trainer for FnTrainer<F>
where
    F: Fn(&[&Record], &Candidate, &Dataset, &mut RandomStream) -> Result<f64, TrainerError>
        + Send
        + Sync,
{
    fn partition_accuracy(
        &self,
        train: &[&Record],
        candidate: &Candidate,
        valid: &Dataset,
        stream: &mut RandomStream,
    ) -> Result<f64, TrainerError> {
        (self.0)(train, candidate, valid, stream)
    }
}

/// The trainer kinds the framework knows about.
#[derive(Clone)]
pub enum TrainerSpec {
    Reference,
    Synthetic(SyntheticTrainer),
    External(Arc<dyn Trainer>),
}

impl fmt::Debug for TrainerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainerSpec::Reference => f.write_str("Reference"),
            TrainerSpec::Synthetic(t) => f.debug_tuple("Synthetic").field(t).finish(),
            TrainerSpec::External(_) => f.write_str("External(..)"),
        }
    }
}

impl Trainer for TrainerSpec {
    fn partition_accuracy(
        &self,
        train: &[&Record],
        candidate: &Candidate,
        valid: &Dataset,
        stream: &mut RandomStream,
    ) -> Result<f64, TrainerError> {
        match self {
            TrainerSpec::Reference => {
                NearestCentroid.partition_accuracy(train, candidate, valid, stream)
            }
            TrainerSpec::Synthetic(t) => t.partition_accuracy(train, candidate, valid, stream),
            TrainerSpec::External(t) => t.partition_accuracy(train, candidate, valid, stream),
        }
    }
}
