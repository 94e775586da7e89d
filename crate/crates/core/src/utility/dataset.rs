use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub type Label = i64;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Label,
}

impl Record {
    pub fn new(id: u64, features: Vec<f64>, label: Label) -> Self {
        Self {
            id,
            features,
            label,
        }
    }
}

/// Non-empty labelled dataset with unique record ids and a common feature
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    dim: usize,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        };
        let dim = first.features.len();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "record {} has {} features, expected {dim}",
                    r.id,
                    r.features.len()
                )));
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "record {} has a non-finite feature",
                    r.id
                )));
            }
            if !seen.insert(r.id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate record id {}",
                    r.id
                )));
            }
        }
        Ok(Self { records, dim })
    }

    /// Headerless numeric CSV: every column but the last is a feature, the
    /// last is an integer label, and the record id is the 0-based row index.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut records = Vec::new();
        for (row, result) in rdr.records().enumerate() {
            let line = row + 1;
            let rec = result.map_err(|e| Error::InvalidDataset(format!("row {line}: {e}")))?;
            if rec.len() < 2 {
                return Err(Error::InvalidDataset(format!(
                    "row {line}: need at least one feature and a label"
                )));
            }
            let (label_field, feature_fields) = {
                let fields: Vec<&str> = rec.iter().collect();
                let (last, rest) = fields.split_last().expect("len >= 2");
                (*last, rest.to_vec())
            };
            let features = feature_fields
                .iter()
                .enumerate()
                .map(|(col, f)| {
                    f.parse::<f64>().map_err(|_| {
                        Error::InvalidDataset(format!(
                            "row {line}, column {}: not a number: {f:?}",
                            col + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let label = label_field.parse::<Label>().map_err(|_| {
                Error::InvalidDataset(format!(
                    "row {line}: label is not an integer: {label_field:?}"
                ))
            })?;
            records.push(Record::new(row as u64, features, label));
        }
        Self::new(records)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::DatasetIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_csv_reader(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::InvalidDataset(reason) => Error::DatasetIo {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Neighbouring dataset with record `id` removed.
    pub fn without(&self, id: u64) -> Result<Self> {
        let records: Vec<Record> = self
            .records
            .iter()
            .filter(|r| r.id != id)
            .cloned()
            .collect();
        if records.len() == self.records.len() {
            return Err(Error::InvalidDataset(format!("no record with id {id}")));
        }
        Self::new(records)
    }

    /// Neighbouring dataset with `record` added.
    pub fn with_record(&self, record: Record) -> Result<Self> {
        let mut records = self.records.clone();
        records.push(record);
        Self::new(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_headerless_csv() {
        let csv = "0.5, 1.0, 1\n-0.5,2,0\n# comment\n3,4,2\n";
        let d = Dataset::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.records()[1], Record::new(1, vec![-0.5, 2.0], 0));
        assert_eq!(d.records()[2].id, 2);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(Dataset::from_csv_reader("1,2,x\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("1,2,1.5\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("1\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("1,2,1\n1,1\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("".as_bytes()).is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(Dataset::new(vec![]).is_err());
        let dup = vec![Record::new(1, vec![0.0], 0), Record::new(1, vec![1.0], 1)];
        assert!(Dataset::new(dup).is_err());
        let ragged = vec![
            Record::new(1, vec![0.0], 0),
            Record::new(2, vec![1.0, 2.0], 1),
        ];
        assert!(Dataset::new(ragged).is_err());
        assert!(Dataset::new(vec![Record::new(0, vec![f64::NAN], 0)]).is_err());
    }

    #[test]
    fn neighbours() {
        let d = Dataset::new((0..5).map(|i| Record::new(i, vec![i as f64], 0)).collect()).unwrap();
        let smaller = d.without(3).unwrap();
        assert_eq!(smaller.len(), 4);
        assert!(smaller.records().iter().all(|r| r.id != 3));
        assert!(d.without(99).is_err());
        assert!(d.with_record(Record::new(2, vec![0.0], 1)).is_err());
        assert_eq!(
            d.with_record(Record::new(9, vec![0.0], 1)).unwrap().len(),
            6
        );
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Dataset::from_csv_path("/nonexistent/train.csv").unwrap_err();
        assert!(matches!(err, Error::DatasetIo { .. }));
    }
}
