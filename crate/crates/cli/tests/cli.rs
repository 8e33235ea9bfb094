use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use serde_json::Value;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn cid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cid"))
        .args(args)
        .current_dir(workspace())
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = cid(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// 200 rows over 24 columns, separable with margin at least 1.
fn separable_csv(dir: &Path) -> PathBuf {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let w: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let header: Vec<String> = cid_core::decider::feature_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut s = format!("{},label,explanation_ref\n", header.join(","));
    let mut n = 0;
    while n < 200 {
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m: f64 = x.iter().zip(&w).map(|(a, b)| a * b / norm).sum();
        if m.abs() < 1.0 {
            continue;
        }
        let cells: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        let label = if m > 0.0 { "correct" } else { "incorrect" };
        s.push_str(&format!("{},{label},syn-{n}#0\n", cells.join(",")));
        n += 1;
    }
    let path = dir.join("separable.csv");
    std::fs::write(&path, s).unwrap();
    path
}

#[test]
fn evaluate_separable_reaches_high_f1() {
    let dir = tempfile::tempdir().unwrap();
    let csv = separable_csv(dir.path());
    let csv = csv.to_str().unwrap();
    for kind in ["svm", "lr"] {
        let v = ok_json(&["--json", "evaluate", "--features", csv, "--model-kind", kind]);
        assert_eq!(v["k"], 10);
        assert!(v["metrics"]["incorrect"]["f1"].as_f64().unwrap() >= 0.95, "{kind}: {v}");
    }
    let table = cid(&["evaluate", "--features", csv]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("200 examples"), "{text}");
}

#[test]
fn identical_invocations_print_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let csv = separable_csv(dir.path());
    let args = ["evaluate", "--features", csv.to_str().unwrap(), "--seed", "7"];
    let a = cid(&args);
    let b = cid(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn ablate_stage_reports_twelve_features() {
    let dir = tempfile::tempdir().unwrap();
    let csv = separable_csv(dir.path());
    let v = ok_json(&[
        "--json",
        "ablate",
        "--features",
        csv.to_str().unwrap(),
        "--drop-stage",
        "mutated",
    ]);
    assert_eq!(v["baseline"]["features_used"], 24);
    assert_eq!(v["ablation"]["features_used"], 12);
    assert_eq!(v["ablation"]["label"], "without mutation");
    let names = v["ablation"]["retained"].as_array().unwrap();
    assert!(names.iter().all(|n| n.as_str().unwrap().contains("_basic_")));
}

#[test]
fn mutate_with_singleton_kb_contains_question() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    std::fs::write(&kb, r#"[{"sentence": "the docs are thorough", "source_id": "only"}]"#).unwrap();
    let q = "Why is the library thread-safe?";
    let v = ok_json(&["--json", "mutate", "--question", q, "--kb", kb.to_str().unwrap()]);
    let mutated = v["mutated"].as_str().unwrap();
    assert!(mutated.contains("Why is the library thread-safe"), "{mutated}");
    assert!(mutated.contains("the docs are thorough"));
    assert_eq!(v["source_id"], "only");
    assert_eq!(v["relation"], "MR1");
}

#[test]
fn exit_codes() {
    assert_eq!(cid(&["--help"]).status.code(), Some(0));
    assert_eq!(cid(&[]).status.code(), Some(1));
    assert_eq!(cid(&["evaluate"]).status.code(), Some(1));
    assert_eq!(
        cid(&["evaluate", "--features", "x.csv", "--model-kind", "rf"])
            .status
            .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let csv = separable_csv(dir.path());
    assert_eq!(
        cid(&["ablate", "--features", csv.to_str().unwrap()]).status.code(),
        Some(1)
    );
    assert_eq!(
        cid(&["--set", "nonsense", "evaluate", "--features", csv.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    let missing = cid(&["evaluate", "--features", "/nonexistent/features.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent"));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert_eq!(
        cid(&["evaluate", "--features", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn interrogate_features_train_detect() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let store_s = store.to_str().unwrap();
    let v = ok_json(&[
        "--json",
        "--config",
        "fixtures/mock.toml",
        "interrogate",
        "--input",
        "fixtures/benchmark.json",
        "--out",
        store_s,
    ]);
    assert_eq!(v["completed"], 3);
    assert_eq!(tree(&store), tree(&workspace().join("fixtures/golden")));

    let replayed = dir.path().join("replayed");
    ok_json(&[
        "--json",
        "--config",
        "fixtures/mock.toml",
        "interrogate",
        "--input",
        "fixtures/benchmark.json",
        "--out",
        replayed.to_str().unwrap(),
        "--replay",
        "fixtures/golden/transcripts",
    ]);
    assert_eq!(tree(&replayed), tree(&workspace().join("fixtures/golden-replay")));

    let csv = dir.path().join("features.csv");
    let f = ok_json(&[
        "--json",
        "features",
        "--records",
        store_s,
        "--labels",
        "fixtures/labels.json",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(f["rows"], 10);
    assert_eq!(f["unlabeled"].as_array().unwrap().len(), 1);

    let model = dir.path().join("model.json");
    ok_json(&[
        "--json",
        "train",
        "--features",
        csv.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    let record = store.join("records/so-50443929.json");
    let d = ok_json(&[
        "--json",
        "detect",
        "--record",
        record.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(d["record_id"], "so-50443929");
    assert_eq!(d["verdicts"].as_array().unwrap().len(), 4);
    for verdict in d["verdicts"].as_array().unwrap() {
        assert!(["correct", "incorrect"].contains(&verdict["label"].as_str().unwrap()));
    }
}
