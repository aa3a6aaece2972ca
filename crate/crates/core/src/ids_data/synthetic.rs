//! Seeded synthetic flow corpus with the class proportions of the public
//! reference corpus at 1/1000 scale.
//!
//! Every class is a mixture of two nearby Gaussian components over ten
//! informative features. The CSV output also carries identifier columns,
//! columns that the selection policy drops by name, a constant column, an
//! exact copy of an informative column, and a few dirty rows (NaN,
//! infinity, duplicates, a repeated header) so that the whole preparation
//! pipeline is exercised.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ingest::{ingest_reader, RawTable};
use super::labels::{CLASS_NAMES, REFERENCE_COUNTS};
use super::DataError;

const IDENTIFIERS: [&str; 6] = [
    "Flow ID",
    "Source IP",
    "Source Port",
    "Destination IP",
    "Destination Port",
    "Timestamp",
];

const INFORMATIVE: [&str; 10] = [
    "Flow Duration",
    "Total Fwd Packets",
    "Total Backward Packets",
    "Flow Bytes/s",
    "Flow Packets/s",
    "Fwd Packet Length Mean",
    "Bwd Packet Length Mean",
    "Flow IAT Mean",
    "Init_Win_bytes_forward",
    "Active Mean",
];

/// Extra numeric columns after the informative ones.
const EXTRA: [&str; 5] = [
    "Fwd PSH Flags",
    "Bwd URG Flags",
    "Fwd Avg Bulk Rate",
    "CWE Flag Count",
    "Fwd IAT Total",
];

const RAW_LABELS: [&str; 15] = [
    "BENIGN",
    "Bot",
    "FTP-Patator",
    "SSH-Patator",
    "DDoS",
    "DoS GoldenEye",
    "DoS Hulk",
    "DoS Slowhttptest",
    "DoS slowloris",
    "Heartbleed",
    "Infiltration",
    "PortScan",
    "Web Attack \u{2013} Brute Force",
    "Web Attack \u{2013} Sql Injection",
    "Web Attack \u{2013} XSS",
];

/// Seed of the bundled corpus used by default everywhere.
pub const CORPUS_SEED: u64 = 2017;

pub const SCALE_DIVISOR: u64 = 1000;
pub const MIN_PER_CLASS: usize = 6;

/// Rows per class after cleaning.
pub fn class_counts() -> Vec<usize> {
    REFERENCE_COUNTS
        .iter()
        .map(|&c| ((c as f64 / SCALE_DIVISOR as f64).round() as usize).max(MIN_PER_CLASS))
        .collect()
}

#[derive(Debug, Clone)]
struct Component {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    seed: u64,
    classes: Vec<[Component; 2]>,
}

impl Generator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = INFORMATIVE.len();
        let classes = (0..CLASS_NAMES.len())
            .map(|_| {
                let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
                let std: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..0.8)).collect();
                let shifted = mean.iter().map(|m| m + rng.random_range(-1.0..1.0)).collect();
                let std2 = (0..d).map(|_| rng.random_range(0.3..0.8)).collect();
                [
                    Component { mean, std },
                    Component {
                        mean: shifted,
                        std: std2,
                    },
                ]
            })
            .collect();
        Self { seed, classes }
    }

    /// Numeric column names in output order.
    pub fn columns() -> Vec<String> {
        INFORMATIVE
            .iter()
            .chain(EXTRA.iter())
            .map(|s| s.to_string())
            .collect()
    }

    /// One flow of `class` with values for [`Generator::columns`].
    pub fn sample(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let comp = &self.classes[class][usize::from(rng.random_bool(0.5))];
        let mut row: Vec<f64> = comp
            .mean
            .iter()
            .zip(&comp.std)
            .map(|(&m, &s)| Normal::new(m, s).expect("positive std").sample(rng))
            .collect();
        let duration = row[0];
        row.push(f64::from(u8::from(rng.random_bool(0.3))));
        row.push(0.0);
        row.push(rng.random_range(0.0..100.0));
        row.push(0.0);
        row.push(duration);
        row
    }

    /// Writes the corpus as CSV with a header whose names carry leading
    /// spaces, as in the public files.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
        for (class, &n) in class_counts().iter().enumerate() {
            for _ in 0..n {
                rows.push((self.sample(class, &mut rng), class));
            }
        }
        // shuffle so classes are interleaved
        for i in (1..rows.len()).rev() {
            let j = rng.random_range(0..=i);
            rows.swap(i, j);
        }
        let mut dirty: Vec<(Vec<f64>, usize)> = Vec::new();
        for k in 0..4 {
            let mut r = rows[k * 7].clone();
            r.0[3] = f64::NAN;
            dirty.push(r);
        }
        for k in 0..3 {
            let mut r = rows[k * 11 + 1].clone();
            r.0[4] = f64::INFINITY;
            dirty.push(r);
        }
        for k in 0..3 {
            dirty.push(rows[k * 13 + 2].clone());
        }
        let header: Vec<String> = IDENTIFIERS
            .iter()
            .map(|s| s.to_string())
            .chain(Self::columns())
            .chain(std::iter::once("Label".to_string()))
            .enumerate()
            .map(|(i, h)| if i == 0 { h } else { format!(" {h}") })
            .collect();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&header)?;
        let total = rows.len() + dirty.len();
        let mut dirty_iter = dirty.into_iter();
        let mut clean_iter = rows.into_iter();
        for i in 0..total {
            if i == total / 2 {
                w.write_record(&header)?;
            }
            // spread the dirty rows through the file
            let row = if i % 97 == 50 {
                dirty_iter.next().or_else(|| clean_iter.next())
            } else {
                clean_iter.next().or_else(|| dirty_iter.next())
            }
            .expect("row count");
            let mut rec: Vec<String> = vec![
                format!("10.0.{}.{}-{}", i / 250, i % 250, i),
                format!("10.0.{}.{}", i / 250, i % 250),
                (1024 + i % 50000).to_string(),
                "192.168.10.50".to_string(),
                [80, 443, 22, 21][i % 4].to_string(),
                format!("3/7/2017 {}:{:02}", 8 + i / 3600 % 10, i / 60 % 60),
            ];
            rec.extend(row.0.iter().map(|v| fmt_value(*v)));
            rec.push(RAW_LABELS[row.1].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        buf
    }

    /// The corpus parsed back through the CSV reader.
    pub fn raw_table(&self) -> RawTable {
        ingest_reader(self.to_csv_bytes().as_slice(), None).expect("generated csv parses")
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Infinity" } else { "-Infinity" }.into()
    } else {
        format!("{v}")
    }
}
