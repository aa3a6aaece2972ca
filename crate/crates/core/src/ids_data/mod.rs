//! Flow-record ingestion, cleaning, feature selection and splitting.

mod cache;
mod clean;
mod ingest;
mod labels;
mod select;
mod split;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ledger::Digest;
use crate::codec::Canonical;

pub use cache::{decode_cache, encode_cache, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use clean::{clean, CleanPolicy, CleanReport, InfinityRule};
pub use ingest::{ingest_csv, ingest_csv_files, ingest_reader, is_identifier, RawRecord, RawTable};
pub use labels::{canonical_class, normalize_name, LabelMap, CLASS_NAMES, REFERENCE_COUNTS};
pub use select::{correlation_matrix, select_features, CorrelationMatrix, SelectPolicy};
pub use split::{split, stratified_sample};

/// Clean, select features, and project onto the kept columns.
pub fn prepare(
    raw: &RawTable,
    clean_policy: CleanPolicy,
    select_policy: &SelectPolicy,
) -> Result<(Dataset, CleanReport), DataError> {
    let (data, report) = clean(raw, clean_policy);
    let schema = select_features(&data, select_policy);
    Ok((data.project(&schema)?, report))
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read `{path}`: {source}")]
    MissingFile {
        path: String,
        source: std::io::Error,
    },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("class `{class}` has {count} records, too few to split")]
    ClassTooSmall { class: String, count: usize },
    #[error("invalid fraction {0}")]
    BadFraction(f64),
    #[error("feature `{0}` not present")]
    MissingFeature(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    NamedColumn,
    ZeroVariance,
    HighCorrelation,
    Identifier,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NamedColumn => "named",
            DropReason::ZeroVariance => "zero-variance",
            DropReason::HighCorrelation => "high-correlation",
            DropReason::Identifier => "identifier",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            DropReason::NamedColumn => 0,
            DropReason::ZeroVariance => 1,
            DropReason::HighCorrelation => 2,
            DropReason::Identifier => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => DropReason::NamedColumn,
            1 => DropReason::ZeroVariance,
            2 => DropReason::HighCorrelation,
            3 => DropReason::Identifier,
            _ => return None,
        })
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            DropReason::NamedColumn,
            DropReason::ZeroVariance,
            DropReason::HighCorrelation,
            DropReason::Identifier,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| format!("unknown drop reason `{s}`"))
    }
}

/// Active feature names in column order, plus every column dropped on the
/// way and why.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub dropped: Vec<(String, DropReason)>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            dropped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Identity of the active column list; drop reasons do not contribute.
    pub fn fingerprint(&self) -> Digest {
        let mut c = Canonical::new();
        c.tag(b"schema").u32(self.names.len() as u32);
        for n in &self.names {
            c.str(n);
        }
        Digest::of(c.as_slice())
    }
}

/// Cleaned records in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub labels: LabelMap,
    values: Vec<f64>,
    targets: Vec<usize>,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        labels: LabelMap,
        values: Vec<f64>,
        targets: Vec<usize>,
    ) -> Self {
        assert_eq!(values.len(), targets.len() * schema.len());
        assert!(targets.iter().all(|&t| t < labels.len()));
        Self {
            schema,
            labels,
            values,
            targets,
        }
    }

    pub fn from_rows(schema: FeatureSchema, labels: LabelMap, rows: &[(Vec<f64>, usize)]) -> Self {
        let values = rows.iter().flat_map(|(r, _)| r.iter().copied()).collect();
        let targets = rows.iter().map(|(_, t)| *t).collect();
        Self::new(schema, labels, values, targets)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn target(&self, i: usize) -> usize {
        self.targets[i]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One column as a contiguous vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.n_features();
        (0..self.len()).map(|i| self.values[i * d + j]).collect()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for &t in &self.targets {
            counts[t] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset::new(
            self.schema.clone(),
            self.labels.clone(),
            values,
            indices.iter().map(|&i| self.targets[i]).collect(),
        )
    }

    /// Reorders and restricts columns to `schema`.
    pub fn project(&self, schema: &FeatureSchema) -> Result<Dataset, DataError> {
        let cols = schema
            .names
            .iter()
            .map(|n| {
                self.schema
                    .position(n)
                    .ok_or_else(|| DataError::MissingFeature(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(self.len() * cols.len());
        for row in self.rows() {
            values.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(Dataset::new(
            schema.clone(),
            self.labels.clone(),
            values,
            self.targets.clone(),
        ))
    }
}
