use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn labels(k: usize) -> LabelMap {
    LabelMap::new((0..k).map(|i| format!("c{i}")).collect())
}

#[test]
fn all_correct_is_diagonal() {
    let m = confusion(&[0, 0, 0, 1, 1], &[0, 0, 0, 1, 1], &labels(2)).unwrap();
    assert_eq!(m.row(0), &[3, 0]);
    assert_eq!(m.row(1), &[0, 2]);
    let n = normalize(&m);
    assert_eq!(n.rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let r = metrics(&m);
    assert_eq!((r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn all_misclassified_has_zero_diagonal() {
    let m = confusion(&[0, 0, 0], &[1, 1, 1], &labels(2)).unwrap();
    assert_eq!(m.get(0, 1), 3);
    assert_eq!(m.trace(), 0);
    let r = metrics(&m);
    assert_eq!(r.accuracy, 0.0);
    // class 0 never predicted, class 1 never true
    assert!(r.per_class[0].precision_undefined);
    assert!(r.per_class[1].recall_undefined);
}

#[test]
fn six_sample_toy_matches_hand_count() {
    let t = [0, 1, 2, 2, 1, 0];
    let p = [0, 2, 2, 1, 1, 1];
    let m = confusion(&t, &p, &labels(3)).unwrap();
    let expect = [[1, 1, 0], [0, 1, 1], [0, 1, 1]];
    for (i, row) in expect.iter().enumerate() {
        assert_eq!(m.row(i), row);
    }
}

#[test]
fn errors() {
    assert_eq!(
        confusion(&[0], &[], &labels(2)),
        Err(EvalError::LengthMismatch { truth: 1, pred: 0 })
    );
    assert_eq!(confusion(&[0], &[5], &labels(2)), Err(EvalError::UnknownClass(5)));
}

#[test]
fn normalize_rows_and_flags_absent_class() {
    let m = confusion(&[0, 0, 0, 0], &[0, 1, 1, 1], &labels(3)).unwrap();
    let n = normalize(&m);
    assert_eq!(n.rows[0], vec![0.25, 0.75, 0.0]);
    assert_eq!(n.empty_rows, vec![1, 2]);
    assert_eq!(n.rows[1], vec![0.0; 3]);
}

#[test]
fn hand_computed_macro_values() {
    // [[5,5],[0,10]]
    let mut t = vec![0; 10];
    t.extend([1; 10]);
    let mut p = vec![0; 5];
    p.extend([1; 15]);
    let r = metrics(&confusion(&t, &p, &labels(2)).unwrap());
    assert!((r.macro_precision - 5.0 / 6.0).abs() < 1e-15);
    assert!((r.macro_recall - 0.75).abs() < 1e-15);
    assert!((r.accuracy - 0.75).abs() < 1e-15);
}

#[test]
fn report_format() {
    let m = confusion(&[0, 1, 1], &[0, 1, 0], &LabelMap::new(vec!["Benign".into(), "Web XSS".into()])).unwrap();
    let text = metrics(&m).to_text();
    let keys: Vec<String> = parse_report(&text).into_iter().map(|(k, _)| k).collect();
    assert_eq!(
        keys,
        [
            "samples",
            "accuracy",
            "macro_precision",
            "macro_recall",
            "macro_f1",
            "precision.Benign",
            "recall.Benign",
            "f1.Benign",
            "precision.Web_XSS",
            "recall.Web_XSS",
            "f1.Web_XSS"
        ]
    );
    assert!(text.contains("accuracy = 0.6667\n"));
    assert!(text.contains("precision.Benign = 0.5000\n"));
}

struct Brute {
    accuracy: f64,
    mp: f64,
    mr: f64,
    mf: f64,
}

/// Counts directly over the pairs, never building a matrix.
fn brute(t: &[usize], p: &[usize], k: usize) -> Brute {
    let n = t.len();
    let acc = t.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / n as f64;
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = (0..n).filter(|&i| t[i] == c && p[i] == c).count() as f64;
        let pred = p.iter().filter(|&&x| x == c).count() as f64;
        let truth = t.iter().filter(|&&x| x == c).count() as f64;
        let pr = if pred == 0.0 { 0.0 } else { tp / pred };
        let rc = if truth == 0.0 { 0.0 } else { tp / truth };
        sp += pr;
        sr += rc;
        sf += if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
    }
    let k = k as f64;
    Brute {
        accuracy: acc,
        mp: sp / k,
        mr: sr / k,
        mf: sf / k,
    }
}

#[test]
fn matches_brute_force_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let k = rng.random_range(2..8);
        let n = rng.random_range(1..200);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let m = confusion(&t, &p, &labels(k)).unwrap();
        let r = metrics(&m);
        let b = brute(&t, &p, k);
        assert!((r.accuracy - b.accuracy).abs() < 1e-12);
        assert!((r.macro_precision - b.mp).abs() < 1e-12);
        assert!((r.macro_recall - b.mr).abs() < 1e-12);
        assert!((r.macro_f1 - b.mf).abs() < 1e-12);
        for (i, row) in normalize(&m).rows.iter().enumerate() {
            if m.row_sum(i) > 0 {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

fn labelings() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..6).prop_flat_map(|k| {
        (1usize..60).prop_flat_map(move |n| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
            )
        })
    })
}

proptest! {
    #[test]
    fn identity_labeling_is_perfect(ys in prop::collection::vec(0usize..5, 1..100)) {
        let r = metrics(&confusion(&ys, &ys, &labels(5)).unwrap());
        prop_assert_eq!(r.accuracy, 1.0);
        // absent classes contribute 0 to the macro mean
        let present = (0..5).filter(|c| ys.contains(c)).count() as f64;
        prop_assert!((r.macro_f1 - present / 5.0).abs() < 1e-12);
        let m = confusion(&ys, &ys, &labels(5)).unwrap();
        prop_assert_eq!(m.total(), ys.len() as u64);
    }

    #[test]
    fn permuting_classes_permutes_metrics((k, t, p) in labelings(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let a = metrics(&confusion(&t, &p, &labels(k)).unwrap());
        let pt: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
        let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let b = metrics(&confusion(&pt, &pp, &labels(k)).unwrap());
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        for c in 0..k {
            prop_assert_eq!(&a.per_class[c], &b.per_class[perm[c]]);
        }
    }

    #[test]
    fn row_sums_match_true_counts((k, t, p) in labelings()) {
        let m = confusion(&t, &p, &labels(k)).unwrap();
        for c in 0..k {
            prop_assert_eq!(m.row_sum(c), t.iter().filter(|&&x| x == c).count() as u64);
        }
    }
}
