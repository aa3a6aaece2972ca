use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

fn by_class(data: &Dataset) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); data.labels.len()];
    for (i, &t) in data.targets().iter().enumerate() {
        groups[t].push(i);
    }
    groups
}

fn check_fraction(f: f64) -> Result<(), DataError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(DataError::BadFraction(f))
    }
}

/// Seeded train/test split. Stratified splits take `round(n * fraction)`
/// test rows from each class, clamped so both sides get at least one.
/// Both outputs keep the original row order.
pub fn split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset), DataError> {
    check_fraction(test_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; data.len()];
    let groups = if stratified {
        by_class(data)
    } else {
        vec![(0..data.len()).collect()]
    };
    for (class, mut group) in groups.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        if group.len() < 2 {
            return Err(DataError::ClassTooSmall {
                class: if stratified {
                    data.labels.name(class).to_string()
                } else {
                    "all".into()
                },
                count: group.len(),
            });
        }
        let n = group.len();
        let k = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        group.shuffle(&mut rng);
        for &i in &group[..k] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_test[i]);
    Ok((data.subset(&train), data.subset(&test)))
}

/// Keeps `round(n * fraction)` rows of every class (at least one of each
/// present class), in original order.
pub fn stratified_sample(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if fraction >= 1.0 && fraction.is_finite() {
        return Ok(data.clone());
    }
    check_fraction(fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for mut group in by_class(data) {
        if group.is_empty() {
            continue;
        }
        let k = ((group.len() as f64 * fraction).round() as usize).clamp(1, group.len());
        group.shuffle(&mut rng);
        chosen.extend_from_slice(&group[..k]);
    }
    chosen.sort_unstable();
    Ok(data.subset(&chosen))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ids_data::{FeatureSchema, LabelMap};

    fn dataset(counts: &[(usize, usize)]) -> Dataset {
        let mut rows = Vec::new();
        let mut x = 0.0;
        for &(class, n) in counts {
            for _ in 0..n {
                rows.push((vec![x], class));
                x += 1.0;
            }
        }
        Dataset::from_rows(FeatureSchema::new(vec!["x".into()]), LabelMap::standard(), &rows)
    }

    #[test]
    fn balanced_stratified() {
        let d = dataset(&[(0, 50), (1, 50)]);
        let (train, test) = split(&d, 0.3, 7, true).unwrap();
        assert_eq!(test.per_class_counts()[..2], [15, 15]);
        assert_eq!(train.len(), 70);
    }

    #[test]
    fn rare_class_keeps_both_sides() {
        let d = dataset(&[(0, 100), (9, 11)]);
        let (train, test) = split(&d, 0.3, 1, true).unwrap();
        let t = test.per_class_counts()[9];
        assert!((3..=4).contains(&t));
        assert!(train.per_class_counts()[9] >= 1);
    }

    #[test]
    fn same_seed_same_split() {
        let d = dataset(&[(0, 40), (3, 17)]);
        assert_eq!(split(&d, 0.25, 5, true).unwrap(), split(&d, 0.25, 5, true).unwrap());
        assert_ne!(split(&d, 0.25, 5, true).unwrap(), split(&d, 0.25, 6, true).unwrap());
    }

    #[test]
    fn errors() {
        let d = dataset(&[(0, 10), (2, 1)]);
        assert!(matches!(split(&d, 0.3, 0, true), Err(DataError::ClassTooSmall { count: 1, .. })));
        assert!(matches!(split(&d, 0.0, 0, false), Err(DataError::BadFraction(_))));
        assert!(split(&d, 0.3, 0, false).is_ok());
    }

    #[test]
    fn sample_keeps_rare_classes() {
        let d = dataset(&[(0, 1000), (9, 3)]);
        let s = stratified_sample(&d, 0.1, 2).unwrap();
        assert_eq!(s.per_class_counts()[0], 100);
        assert_eq!(s.per_class_counts()[9], 1);
    }

    proptest! {
        #[test]
        fn disjoint_exhaustive_proportional(
            counts in proptest::collection::vec(2usize..60, 1..5),
            frac in 0.05f64..0.95,
            seed: u64,
        ) {
            let spec: Vec<(usize, usize)> = counts.iter().enumerate().map(|(c, &n)| (c, n)).collect();
            let d = dataset(&spec);
            let (train, test) = split(&d, frac, seed, true).unwrap();
            let mut xs: Vec<f64> = train.rows().chain(test.rows()).map(|r| r[0]).collect();
            xs.sort_by(f64::total_cmp);
            let all: Vec<f64> = (0..d.len()).map(|i| i as f64).collect();
            prop_assert_eq!(xs, all);
            for (c, &n) in counts.iter().enumerate() {
                let t = test.per_class_counts()[c] as f64;
                prop_assert!((t - n as f64 * frac).abs() <= 1.0);
            }
        }
    }
}
