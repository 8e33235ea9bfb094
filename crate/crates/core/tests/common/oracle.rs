//! From-scratch feature computation over transcript JSONL, sharing no code
//! with the library.

use std::collections::BTreeMap;

use serde_json::Value;

const DIM: usize = 256;

pub fn oracle_embed(text: &str) -> Vec<f64> {
    let lower = text.to_lowercase();
    let mut v = vec![0.0f64; DIM];
    let mut token = String::new();
    let flush = |t: &mut String, v: &mut Vec<f64>| {
        if !t.is_empty() {
            let mut h: u64 = 14695981039346656037;
            for b in t.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(1099511628211);
            }
            v[(h % DIM as u64) as usize] += 1.0;
            t.clear();
        }
    };
    for c in lower.chars() {
        if c.is_alphanumeric() {
            token.push(c);
        } else {
            flush(&mut token, &mut v);
        }
    }
    flush(&mut token, &mut v);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm > 0.0, "oracle: no tokens in {text:?}");
    v.iter().map(|x| x / norm).collect()
}

pub fn oracle_cos(a: &str, b: &str) -> f64 {
    let (x, y) = (oracle_embed(a), oracle_embed(b));
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for i in 0..DIM {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0)
}

pub struct Turn {
    pub prompt: String,
    pub response: String,
}

pub fn read_sessions(path: &std::path::Path) -> BTreeMap<String, Vec<Turn>> {
    let mut sessions: BTreeMap<String, Vec<(u64, Turn)>> = BTreeMap::new();
    for line in std::fs::read_to_string(path).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let s = |k: &str| v[k].as_str().unwrap().to_string();
        sessions.entry(s("session_id")).or_default().push((
            v["turn"].as_u64().unwrap(),
            Turn {
                prompt: s("prompt"),
                response: s("response"),
            },
        ));
    }
    sessions
        .into_iter()
        .map(|(k, mut turns)| {
            turns.sort_by_key(|t| t.0);
            (k, turns.into_iter().map(|t| t.1).collect())
        })
        .collect()
}

/// Oracle vector for explanation `i`, in the documented canonical order.
pub fn oracle_features(sessions: &BTreeMap<String, Vec<Turn>>, record_id: &str, i: usize) -> Vec<f64> {
    let main = &sessions[&format!("{record_id}/interrogation")];
    let generator = &sessions[&format!("{record_id}/generator-{i}")];
    let marker = "to challenge the following explanation: ";
    let p = &generator[0].prompt;
    let e = &p[p.find(marker).unwrap() + marker.len()..];
    // main: base, enquiry, then 6 turns per explanation (basic W/H/R, mutated W/H/R)
    let turns = &main[2 + 6 * i..2 + 6 * i + 6];
    let q = |stage: usize, k: usize| turns[3 * stage + k].prompt.as_str();
    let r = |stage: usize, k: usize| turns[3 * stage + k].response.as_str();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut out = Vec::new();
    for s in 0..2 {
        for k in 0..3 {
            out.push(oracle_cos(e, r(s, k)));
        }
    }
    for s in 0..2 {
        for (a, b) in pairs {
            out.push(oracle_cos(r(s, a), r(s, b)));
        }
    }
    for s in 0..2 {
        for k in 0..3 {
            out.push(oracle_cos(q(s, k), r(s, k)));
        }
    }
    for s in 0..2 {
        for (a, b) in pairs {
            out.push(oracle_cos(q(s, a), q(s, b)));
        }
    }
    out
}
