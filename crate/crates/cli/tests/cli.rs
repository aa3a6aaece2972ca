use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn edgeguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = edgeguard(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn key(text: &str, k: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("no `{k}` in\n{text}"))
        .to_string()
}

#[test]
fn train_then_evaluate_synthetic_tree() {
    let dir = TempDir::new().unwrap();
    let model_dir = dir.path().join("m");
    ok(&["train", "--synthetic", "--out", path(&model_dir)]);
    for f in ["model.bin", "test.flows", "train_report.txt", "manifest.txt"] {
        assert!(model_dir.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(model_dir.join("train_report.txt")).unwrap();
    assert_eq!(key(&report, "family"), "tree");

    let eval_dir = dir.path().join("e");
    let stdout = ok(&[
        "evaluate",
        "--model",
        path(&model_dir.join("model.bin")),
        "--data",
        path(&model_dir.join("test.flows")),
        "--out",
        path(&eval_dir),
    ]);
    let metrics = fs::read_to_string(eval_dir.join("metrics.txt")).unwrap();
    assert_eq!(stdout, metrics);
    let acc: f64 = key(&metrics, "accuracy").parse().unwrap();
    assert!(acc >= 0.99, "{metrics}");
    for k in ["samples", "macro_precision", "macro_recall", "macro_f1", "f1.Benign"] {
        key(&metrics, k);
    }
    let norm = fs::read_to_string(eval_dir.join("confusion_normalized.tsv")).unwrap();
    assert_eq!(norm.lines().count(), 16);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(edgeguard(&["train"]).status.code(), Some(2));
    assert_eq!(edgeguard(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(edgeguard(&["train", "--synthetic", "--family", "svm"]).status.code(), Some(2));
    assert_eq!(edgeguard(&["simulate", "--bundled", "nope"]).status.code(), Some(2));
    assert!(edgeguard(&["--help"]).status.success());
}

#[test]
fn missing_model_file_is_a_model_error() {
    let dir = TempDir::new().unwrap();
    let bogus = dir.path().join("model.bin");
    fs::write(&bogus, b"not a model").unwrap();
    let out = edgeguard(&[
        "evaluate",
        "--model",
        path(&bogus),
        "--data",
        path(&bogus),
        "--out",
        path(&dir.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let d = dir.path().join(name);
        ok(&["train", "--synthetic", "--family", "gnb", "--seed", "5", "--out", path(&d)]);
        d
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["model.bin", "test.flows", "train_report.txt", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["train", "--synthetic", "--family", "gnb", "--seed", "6", "--out", path(&c)]);
    assert_ne!(fs::read(a.join("test.flows")).unwrap(), fs::read(c.join("test.flows")).unwrap());
}

#[test]
fn simulate_and_query_the_ledger() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let stdout = ok(&["simulate", "--bundled", "honest", "--out", path(&out)]);
    assert_eq!(key(&stdout, "committed_updates"), "20");
    assert_eq!(key(&stdout, "safety"), "true");
    let ledger = out.join("ledger.txt");

    assert_eq!(ok(&["ledger", "verify", path(&ledger)]).trim(), "OK");
    let q = ok(&["ledger", "query", path(&ledger), "s1"]);
    assert!(q.lines().next().unwrap().contains("36"), "{q}");
    let inspect = ok(&["ledger", "inspect", path(&ledger)]);
    assert!(inspect.contains("s4"));
    assert_eq!(edgeguard(&["ledger", "query", path(&ledger), "nobody"]).status.code(), Some(3));
}

#[test]
fn tampered_ledger_fails_verification() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    ok(&["simulate", "--bundled", "honest", "--out", path(&out)]);
    let text = fs::read_to_string(out.join("ledger.txt")).unwrap();
    // change one hex digit inside the transactions of block 5
    let line_start: usize = text
        .lines()
        .take_while(|l| !l.starts_with("5\t"))
        .map(|l| l.len() + 1)
        .sum();
    let line = text[line_start..].lines().next().unwrap();
    let tx_field: usize = line.split('\t').take(4).map(|f| f.len() + 1).sum();
    let pos = line_start + tx_field + 100;
    let mut bytes = text.into_bytes();
    bytes[pos] = if bytes[pos] == b'0' { b'1' } else { b'0' };
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, &bytes).unwrap();
    let res = edgeguard(&["ledger", "verify", path(&bad)]);
    assert_eq!(res.status.code(), Some(5));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("FAIL: block at height 5"), "{msg}");
}

#[test]
fn config_file_overrides_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# gnb with a fixed seed\nfamily = gnb\nseed = 9\nsynthetic = true\n").unwrap();
    let out = dir.path().join("m");
    ok(&["train", "--family", "tree", "--config", path(&cfg), "--out", path(&out)]);
    let report = fs::read_to_string(out.join("train_report.txt")).unwrap();
    assert_eq!(key(&report, "family"), "gnb");
    assert_eq!(key(&report, "seed"), "9");
}
