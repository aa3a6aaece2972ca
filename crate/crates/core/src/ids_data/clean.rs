use std::collections::HashSet;

use super::ingest::RawTable;
use super::{Dataset, DropReason, FeatureSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfinityRule {
    Remove,
    /// Replace with the largest (smallest for -inf) finite value of the
    /// column among retained rows.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CleanPolicy {
    pub infinity: InfinityRule,
    pub dedupe: bool,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        Self {
            infinity: InfinityRule::Remove,
            dedupe: true,
        }
    }
}

impl CleanPolicy {
    /// Drops only rows with missing or unparseable values and keeps
    /// duplicates; the per-class counts of the public corpus are stated
    /// under this rule.
    pub fn reference_counts() -> Self {
        Self {
            infinity: InfinityRule::Clamp,
            dedupe: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanReport {
    pub input: usize,
    pub invalid: usize,
    pub unlabeled: usize,
    pub nan: usize,
    pub infinite: usize,
    pub clamped: usize,
    pub duplicates: usize,
    pub retained: usize,
}

impl CleanReport {
    pub fn removed(&self) -> usize {
        self.input - self.retained
    }
}

pub fn clean(raw: &RawTable, policy: CleanPolicy) -> (Dataset, CleanReport) {
    let d = raw.columns.len();
    let mut report = CleanReport {
        input: raw.len(),
        ..CleanReport::default()
    };
    let mut keep: Vec<usize> = Vec::with_capacity(raw.len());
    for (i, r) in raw.records().enumerate() {
        if r.invalid {
            report.invalid += 1;
        } else if r.label.is_none() {
            report.unlabeled += 1;
        } else if r.values.iter().any(|v| v.is_nan()) {
            report.nan += 1;
        } else if policy.infinity == InfinityRule::Remove && r.values.iter().any(|v| v.is_infinite()) {
            report.infinite += 1;
        } else {
            keep.push(i);
        }
    }
    if policy.dedupe {
        let mut seen: HashSet<(Vec<u64>, usize)> = HashSet::with_capacity(keep.len());
        keep.retain(|&i| {
            let r = raw.record(i);
            let key = (
                r.values.iter().map(|v| v.to_bits()).collect(),
                r.label.unwrap_or(usize::MAX),
            );
            let fresh = seen.insert(key);
            if !fresh {
                report.duplicates += 1;
            }
            fresh
        });
    }
    let (lo, hi) = finite_bounds(raw, &keep, d);
    let mut values = Vec::with_capacity(keep.len() * d);
    let mut targets = Vec::with_capacity(keep.len());
    for &i in &keep {
        let r = raw.record(i);
        for (j, &v) in r.values.iter().enumerate() {
            if v.is_infinite() {
                report.clamped += 1;
                values.push(if v > 0.0 { hi[j] } else { lo[j] });
            } else {
                values.push(v);
            }
        }
        targets.push(r.label.expect("labelled"));
    }
    report.retained = keep.len();
    let mut schema = FeatureSchema::new(raw.columns.clone());
    schema.dropped = raw
        .identifiers
        .iter()
        .map(|n| (n.clone(), DropReason::Identifier))
        .collect();
    (Dataset::new(schema, raw.labels.clone(), values, targets), report)
}

fn finite_bounds(raw: &RawTable, keep: &[usize], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for &i in keep {
        for (j, &v) in raw.record(i).values.iter().enumerate() {
            if v.is_finite() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
    }
    for j in 0..d {
        if !lo[j].is_finite() {
            lo[j] = 0.0;
            hi[j] = 0.0;
        }
    }
    (lo, hi)
}
