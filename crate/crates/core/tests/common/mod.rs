#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cid_core::challenger::KnowledgeBase;
use cid_core::config::Config;
use cid_core::embedder::HashedBowProvider;
use cid_core::gateway::{ChatBackend, Gateway, MockBackend, ReplayBackend, RetryPolicy};
use cid_core::par::Execution;
use cid_core::pipeline::{run_benchmark, BatchReport, PipelineContext};
use cid_core::store::{read_benchmark, Store};

pub mod oracle;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(rel: &str) -> PathBuf {
    fixtures().join(rel)
}

pub fn mock_config() -> Config {
    let mut c = Config::load(&fixture("mock.toml")).expect("mock config parses");
    c.challenger.kb_path = Some(fixture("kb.json"));
    c
}

/// Runs the fixture benchmark against `backend` into a store at `out`.
pub fn run_fixture_benchmark(backend: Arc<dyn ChatBackend>, out: &Path, exec: Execution) -> BatchReport {
    let config = mock_config();
    let embedder = HashedBowProvider::default();
    let kb = KnowledgeBase::load(&fixture("kb.json"), &embedder).unwrap();
    let gateway = Gateway::new(backend).with_retry(RetryPolicy::none());
    let ctx = PipelineContext {
        gateway: &gateway,
        embedder: &embedder,
        kb: &kb,
        plan: config.challenger.plan(),
        params: config.generation_params(),
        enquiry_style: config.pipeline.enquiry_style,
        fixed_clock: true,
    };
    let entries = read_benchmark(&fixture("benchmark.json")).unwrap();
    let store = Store::open(out).unwrap();
    let report = run_benchmark(&entries, &ctx, &store, config.pipeline.concurrency, exec);
    store.write_json("reports", "batch", &report).unwrap();
    report
}

pub fn run_mock(out: &Path, exec: Execution) -> BatchReport {
    run_fixture_benchmark(Arc::new(MockBackend::synthetic()), out, exec)
}

pub fn run_replay(out: &Path) -> BatchReport {
    let backend = ReplayBackend::from_dir(&fixture("golden/transcripts")).unwrap();
    run_fixture_benchmark(Arc::new(backend), out, Execution::Parallel)
}

/// Relative paths and bytes of every file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Copies `from` over `to` when `CID_BLESS=1`, for regenerating goldens.
pub fn bless(from: &Path, to: &Path) -> bool {
    if std::env::var("CID_BLESS").as_deref() != Ok("1") {
        return false;
    }
    let _ = std::fs::remove_dir_all(to);
    for (rel, bytes) in tree(from) {
        let dst = to.join(rel);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::write(dst, bytes).unwrap();
    }
    true
}

/// `n` points in the 24 canonical feature columns, uniform in [-3, 3],
/// labelled by a random unit hyperplane through the origin. Points closer
/// than 1 to the plane are rejected, so the geometric margin is at least 1.
pub fn separable_dataset(n: usize, seed: u64) -> cid_core::decider::Dataset {
    use cid_core::decider::{feature_names, Dataset, Label, FEATURE_COUNT};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..FEATURE_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let w: Vec<f64> = w.iter().map(|x| x / norm).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while rows.len() < n {
        let x: Vec<f64> = (0..FEATURE_COUNT).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        if m.abs() < 1.0 {
            continue;
        }
        labels.push(if m > 0.0 { Label::Correct } else { Label::Incorrect });
        rows.push(x);
    }
    let names = feature_names().into_iter().map(str::to_string).collect();
    Dataset::new(names, rows, labels).unwrap()
}
