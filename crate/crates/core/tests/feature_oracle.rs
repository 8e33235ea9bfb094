//! Recomputes every feature of the golden records from the transcripts alone,
//! with a from-scratch embedder and cosine, and compares exactly.

mod common;

use cid_core::decider::{extract_features, feature_names};
use cid_core::embedder::HashedBowProvider;
use cid_core::store::Store;
use common::fixture;
use common::oracle::{oracle_features, read_sessions};

#[test]
fn extracted_features_equal_transcript_oracle() {
    let store = Store::existing(fixture("golden")).unwrap();
    let embedder = HashedBowProvider::default();
    let mut checked = 0;
    for rec in store.load_all_records().unwrap() {
        let sessions = read_sessions(&store.root().join(&rec.transcript));
        for i in 0..rec.explanations.len() {
            let fv = extract_features(&rec, i, &embedder).unwrap();
            let oracle = oracle_features(&sessions, &rec.record_id, i);
            assert_eq!(oracle.len(), 24);
            for (j, (a, b)) in fv.values().iter().zip(&oracle).enumerate() {
                assert_eq!(a, b, "{}#{i} feature {}", rec.record_id, feature_names()[j]);
                assert!((-1.0..=1.0).contains(a));
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 11);
}

#[test]
fn canonical_names_follow_category_stage_kind_order() {
    let names = feature_names();
    assert_eq!(names.len(), 24);
    assert_eq!(&names[..3], &["er_basic_why", "er_basic_how", "er_basic_really"]);
    assert_eq!(names[6], "rr_basic_why_how");
    assert_eq!(names[12], "qr_basic_why");
    assert_eq!(names[23], "qq_mutated_how_really");
}
