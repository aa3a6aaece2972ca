use std::collections::BTreeMap;
use std::sync::OnceLock;

/// The fifteen traffic classes, benign first.
pub const CLASS_NAMES: [&str; 15] = [
    "Benign",
    "Bot",
    "FTP Patator",
    "SSH Patator",
    "DDos",
    "Dos GoldenEye",
    "Dos Hulk",
    "Dos slowhttptest",
    "Dos slowloris",
    "Heartbleed",
    "Infiltration",
    "PortScan",
    "Web Brute Force",
    "Web SQL Injection",
    "Web XSS",
];

/// Per-class record counts of the cleaned reference corpus, aligned with
/// [`CLASS_NAMES`].
pub const REFERENCE_COUNTS: [u64; 15] = [
    2_272_688, 1_966, 7_938, 5_897, 128_027, 10_293, 230_124, 5_499, 5_796, 11, 36, 158_930,
    1_507, 21, 652,
];

const NORMALIZATION_TABLE: &str = include_str!("labels.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    classes: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelMap {
    pub fn new(classes: Vec<String>) -> Self {
        let index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self { classes, index }
    }

    pub fn standard() -> Self {
        Self::new(CLASS_NAMES.iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Maps a raw label spelling onto a class index.
    pub fn resolve(&self, raw: &str) -> Option<usize> {
        self.index_of(raw)
            .or_else(|| canonical_class(raw).and_then(|c| self.index_of(c)))
    }
}

/// Lowercase, with every run of non-alphanumeric characters collapsed to a
/// single space.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut gap = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

fn table() -> &'static BTreeMap<String, &'static str> {
    static TABLE: OnceLock<BTreeMap<String, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        NORMALIZATION_TABLE
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .filter_map(|l| l.split_once('\t'))
            .map(|(raw, class)| (raw.to_string(), class.trim()))
            .collect()
    })
}

/// Canonical class name for a raw label, if the label is known.
pub fn canonical_class(raw: &str) -> Option<&'static str> {
    table().get(&normalize_name(raw)).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_total() {
        assert_eq!(REFERENCE_COUNTS.iter().sum::<u64>(), 2_829_385);
    }

    #[test]
    fn table_targets_are_classes() {
        for class in table().values() {
            assert!(CLASS_NAMES.contains(class), "{class}");
        }
        for class in CLASS_NAMES {
            assert_eq!(canonical_class(class), Some(class));
        }
    }

    #[test]
    fn raw_spellings_resolve() {
        let m = LabelMap::standard();
        assert_eq!(m.len(), 15);
        assert_eq!(m.resolve("BENIGN"), Some(0));
        assert_eq!(m.resolve("Web Attack \u{2013} Brute Force"), Some(12));
        assert_eq!(m.resolve("Web Attack \u{fffd} Sql Injection"), Some(13));
        assert_eq!(m.resolve("Web Attack - XSS"), Some(14));
        assert_eq!(m.resolve("DoS Slowhttptest"), Some(7));
        assert_eq!(m.resolve("FTP-Patator"), Some(2));
        assert_eq!(m.resolve("Label"), None);
    }

    #[test]
    fn normalize_collapses_separators() {
        assert_eq!(normalize_name("  Fwd  PSH_Flags "), "fwd psh flags");
        assert_eq!(normalize_name("Flow Bytes/s"), "flow bytes s");
    }
}
