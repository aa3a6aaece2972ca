use rayon::prelude::*;

use super::ingest::is_identifier;
use super::labels::normalize_name;
use super::{Dataset, DropReason, FeatureSchema};

/// Pearson coefficients between all active features.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    values: Vec<f64>,
    /// Constant features, for which every coefficient is undefined and
    /// stored as 0.
    pub undefined: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Tab-separated grid with a header row, for external plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.names {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(n);
            for j in 0..self.len() {
                if self.undefined[i] || self.undefined[j] {
                    out.push_str("\tNA");
                } else {
                    out.push_str(&format!("\t{:.4}", self.get(i, j)));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn correlation_matrix(data: &Dataset) -> CorrelationMatrix {
    let k = data.n_features();
    let n = data.len();
    let centered: Vec<(Vec<f64>, f64)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let col = data.column(j);
            let mean = col.iter().sum::<f64>() / n.max(1) as f64;
            let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let ss = c.iter().map(|v| v * v).sum::<f64>();
            (c, ss)
        })
        .collect();
    let undefined: Vec<bool> = centered.iter().map(|(_, ss)| n < 2 || *ss == 0.0).collect();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            (0..k)
                .map(|j| {
                    if undefined[i] || undefined[j] {
                        return 0.0;
                    }
                    if i == j {
                        return 1.0;
                    }
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    let dot: f64 = centered[a]
                        .0
                        .iter()
                        .zip(&centered[b].0)
                        .map(|(x, y)| x * y)
                        .sum();
                    (dot / (centered[a].1.sqrt() * centered[b].1.sqrt())).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    CorrelationMatrix {
        names: data.schema.names.clone(),
        values: rows.concat(),
        undefined,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectPolicy {
    /// Columns whose normalized name contains one of these are dropped.
    pub named_phrases: Vec<String>,
    pub correlation_threshold: f64,
}

impl Default for SelectPolicy {
    fn default() -> Self {
        Self {
            named_phrases: ["flow id", "psh flags", "urg flags", "bulk rate"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            correlation_threshold: 0.95,
        }
    }
}

impl SelectPolicy {
    fn named(&self, name: &str) -> bool {
        let norm = normalize_name(name);
        self.named_phrases.iter().any(|p| norm.contains(p.as_str()))
    }
}

/// Drops named and identifier columns, then constant columns, then the
/// later column of every pair correlated beyond the threshold.
pub fn select_features(data: &Dataset, policy: &SelectPolicy) -> FeatureSchema {
    let mut dropped: Vec<(String, DropReason)> = data
        .schema
        .dropped
        .iter()
        .map(|(n, r)| {
            let r = if *r == DropReason::Identifier && policy.named(n) {
                DropReason::NamedColumn
            } else {
                *r
            };
            (n.clone(), r)
        })
        .collect();
    let mut keep: Vec<usize> = Vec::new();
    for (j, name) in data.schema.names.iter().enumerate() {
        if policy.named(name) {
            dropped.push((name.clone(), DropReason::NamedColumn));
        } else if is_identifier(name) {
            dropped.push((name.clone(), DropReason::Identifier));
        } else {
            keep.push(j);
        }
    }
    let mut varying = Vec::new();
    for j in keep {
        let col = data.column(j);
        let constant = col.windows(2).all(|w| w[0] == w[1]);
        if constant {
            dropped.push((data.schema.names[j].clone(), DropReason::ZeroVariance));
        } else {
            varying.push(j);
        }
    }
    let sub = data
        .project(&FeatureSchema::new(
            varying.iter().map(|&j| data.schema.names[j].clone()).collect(),
        ))
        .expect("columns exist");
    let corr = correlation_matrix(&sub);
    let mut alive = vec![true; sub.n_features()];
    for i in 0..alive.len() {
        if !alive[i] {
            continue;
        }
        for j in i + 1..alive.len() {
            if alive[j] && corr.get(i, j).abs() > policy.correlation_threshold {
                alive[j] = false;
            }
        }
    }
    let mut names = Vec::new();
    for (i, name) in sub.schema.names.iter().enumerate() {
        if alive[i] {
            names.push(name.clone());
        } else {
            dropped.push((name.clone(), DropReason::HighCorrelation));
        }
    }
    FeatureSchema { names, dropped }
}

#[cfg(test)]
mod tests {
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ids_data::LabelMap;

    fn data(names: &[&str], rows: Vec<Vec<f64>>) -> Dataset {
        let rows: Vec<(Vec<f64>, usize)> = rows.into_iter().map(|r| (r, 0)).collect();
        Dataset::from_rows(
            FeatureSchema::new(names.iter().map(|s| s.to_string()).collect()),
            LabelMap::standard(),
            &rows,
        )
    }

    #[test]
    fn self_and_negation() {
        let d = data(
            &["x", "neg", "c"],
            (0..10).map(|i| vec![i as f64 * 1.5, -(i as f64) * 1.5, 4.0]).collect(),
        );
        let m = correlation_matrix(&d);
        assert_eq!(m.get(0, 0), 1.0);
        assert!((m.get(0, 1) + 1.0).abs() < 1e-12);
        assert_eq!(m.undefined, vec![false, false, true]);
        assert_eq!(m.get(2, 2), 0.0);
        assert!(m.to_tsv().contains("NA"));
    }

    #[test]
    fn independent_features_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..10_000)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let m = correlation_matrix(&data(&["a", "b"], rows));
        assert!(m.get(0, 1).abs() < 0.05);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = (0..50)
            .map(|_| {
                let a: f64 = rng.random();
                vec![a, a * 2.0 + rng.random::<f64>(), rng.random(), -a]
            })
            .collect();
        let m = correlation_matrix(&data(&["a", "b", "c", "d"], rows));
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.get(i, j) - m.get(j, i)).abs() <= 1e-12);
                assert!((-1.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn selection_reasons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = (0..40)
            .map(|i| {
                let a: f64 = rng.random();
                let b: f64 = rng.random();
                vec![i as f64, a, 0.0, a, b, rng.random(), rng.random()]
            })
            .collect();
        let mut d = data(
            &["Flow ID", "Flow Duration", "zeros", "copy", "Fwd PSH Flags", "Fwd Avg Bulk Rate", "Destination Port"],
            rows,
        );
        d.schema.dropped.push(("Source IP".into(), DropReason::Identifier));
        let s = select_features(&d, &SelectPolicy::default());
        assert_eq!(s.names, vec!["Flow Duration"]);
        let reason = |n: &str| s.dropped.iter().find(|(m, _)| m == n).map(|(_, r)| *r);
        assert_eq!(reason("Flow ID"), Some(DropReason::NamedColumn));
        assert_eq!(reason("zeros"), Some(DropReason::ZeroVariance));
        assert_eq!(reason("copy"), Some(DropReason::HighCorrelation));
        assert_eq!(reason("Fwd PSH Flags"), Some(DropReason::NamedColumn));
        assert_eq!(reason("Fwd Avg Bulk Rate"), Some(DropReason::NamedColumn));
        assert_eq!(reason("Destination Port"), Some(DropReason::Identifier));
        assert_eq!(reason("Source IP"), Some(DropReason::Identifier));
        for n in &s.names {
            assert!(s.dropped.iter().all(|(m, _)| m != n));
        }
    }
}
