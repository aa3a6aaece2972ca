use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::labels::{normalize_name, LabelMap};
use super::DataError;

const IDENTIFIERS: [&str; 12] = [
    "flow id",
    "source ip",
    "src ip",
    "destination ip",
    "dst ip",
    "source port",
    "src port",
    "destination port",
    "dst port",
    "timestamp",
    "external ip",
    "simillarhttp",
];

/// Columns that identify a flow rather than describe it.
pub fn is_identifier(name: &str) -> bool {
    IDENTIFIERS.contains(&normalize_name(name).as_str())
}

/// One parsed data row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord<'a> {
    pub values: &'a [f64],
    /// Some cell could not be parsed as a number.
    pub invalid: bool,
    /// Class index, `None` for an unknown label.
    pub label: Option<usize>,
}

/// Parsed CSV content before cleaning. Numeric columns only; identifier
/// columns are recorded by name and their cells skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub identifiers: Vec<String>,
    pub labels: LabelMap,
    values: Vec<f64>,
    invalid: Vec<bool>,
    targets: Vec<Option<usize>>,
}

impl RawTable {
    pub fn new(columns: Vec<String>, identifiers: Vec<String>, labels: LabelMap) -> Self {
        Self {
            columns,
            identifiers,
            labels,
            values: Vec::new(),
            invalid: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, values: &[f64], invalid: bool, label: Option<usize>) {
        assert_eq!(values.len(), self.columns.len());
        self.values.extend_from_slice(values);
        self.invalid.push(invalid);
        self.targets.push(label);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn record(&self, i: usize) -> RawRecord<'_> {
        let d = self.columns.len();
        RawRecord {
            values: &self.values[i * d..(i + 1) * d],
            invalid: self.invalid[i],
            label: self.targets[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = RawRecord<'_>> {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Lifts cleaned data back into raw form.
    pub fn from_dataset(data: &super::Dataset) -> Self {
        let mut t = RawTable::new(data.schema.names.clone(), Vec::new(), data.labels.clone());
        for i in 0..data.len() {
            t.push(data.row(i), false, Some(data.target(i)));
        }
        t
    }

    fn append(&mut self, other: RawTable) {
        self.values.extend(other.values);
        self.invalid.extend(other.invalid);
        self.targets.extend(other.targets);
    }
}

fn parse_cell(bytes: &[u8]) -> Option<f64> {
    std::str::from_utf8(bytes).ok()?.trim().parse().ok()
}

/// Reads comma-separated flow records with a header row. Header names are
/// trimmed; the label column must be named `Label`. When `expected` is
/// given the trimmed header must equal it.
pub fn ingest_reader<R: Read>(
    reader: R,
    expected: Option<&[String]>,
) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .byte_headers()?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_string())
        .collect();
    if let Some(exp) = expected {
        if exp != header.as_slice() {
            return Err(DataError::HeaderMismatch(format!(
                "expected {} columns {:?}..., found {:?}...",
                exp.len(),
                exp.iter().take(3).collect::<Vec<_>>(),
                header.iter().take(3).collect::<Vec<_>>()
            )));
        }
    }
    let label_col = header
        .iter()
        .position(|h| h == "Label")
        .ok_or_else(|| DataError::HeaderMismatch("no `Label` column".into()))?;
    let mut columns = Vec::new();
    let mut identifiers = Vec::new();
    let mut numeric = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if i == label_col {
            continue;
        }
        if is_identifier(h) {
            identifiers.push(h.clone());
        } else {
            columns.push(h.clone());
            numeric.push(i);
        }
    }
    let labels = LabelMap::standard();
    let mut table = RawTable::new(columns, identifiers, labels);
    let mut record = csv::ByteRecord::new();
    let mut row = vec![0.0; numeric.len()];
    while rdr.read_byte_record(&mut record)? {
        let mut invalid = record.len() != header.len();
        for (slot, &col) in row.iter_mut().zip(&numeric) {
            match record.get(col).and_then(parse_cell) {
                Some(v) => *slot = v,
                None => {
                    *slot = f64::NAN;
                    invalid = true;
                }
            }
        }
        let label = record
            .get(label_col)
            .and_then(|l| table.labels.resolve(String::from_utf8_lossy(l).trim()));
        table.push(&row, invalid, label);
    }
    Ok(table)
}

pub fn ingest_csv(path: &Path, expected: Option<&[String]>) -> Result<RawTable, DataError> {
    let file = File::open(path).map_err(|source| DataError::MissingFile {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(file), expected)
}

/// Concatenates several files that share one header.
pub fn ingest_csv_files(paths: &[impl AsRef<Path>]) -> Result<RawTable, DataError> {
    let mut out: Option<RawTable> = None;
    for p in paths {
        let t = ingest_csv(p.as_ref(), None)?;
        match &mut out {
            None => out = Some(t),
            Some(acc) => {
                if acc.columns != t.columns || acc.identifiers != t.identifiers {
                    return Err(DataError::HeaderMismatch(format!(
                        "`{}` has a different header",
                        p.as_ref().display()
                    )));
                }
                acc.append(t);
            }
        }
    }
    out.ok_or_else(|| DataError::HeaderMismatch("no input files".into()))
}
