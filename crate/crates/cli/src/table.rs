//! Human-readable renderings of reports.

use cid_core::decider::ModelMetrics;
use cid_core::pipeline::{BatchReport, DetectionReport};

fn row(cells: &[String], widths: &[usize]) -> String {
    let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
    padded.join("  ").trim_end().to_string() + "\n"
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = row(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>(), &widths);
    out.push_str(&row(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
        &widths,
    ));
    for r in rows {
        out.push_str(&row(r, &widths));
    }
    out
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

/// P/R/F1 under three averaging conventions, plus accuracy and confusion counts.
pub fn metrics_table(models: &[(String, &ModelMetrics)]) -> String {
    let mut rows = Vec::new();
    for (name, m) in models {
        let conventions = [
            ("incorrect", m.incorrect.precision, m.incorrect.recall, m.incorrect.f1),
            ("macro", m.macro_avg.precision, m.macro_avg.recall, m.macro_avg.f1),
            (
                "weighted",
                m.weighted_avg.precision,
                m.weighted_avg.recall,
                m.weighted_avg.f1,
            ),
        ];
        for (i, (conv, p, r, f)) in conventions.into_iter().enumerate() {
            let (label, acc) = if i == 0 {
                (name.clone(), f2(m.accuracy))
            } else {
                (String::new(), String::new())
            };
            rows.push(vec![label, conv.to_string(), f2(p), f2(r), f2(f), acc]);
        }
    }
    let mut out = render(&["Model", "Averaging", "P", "R", "F1", "A"], &rows);
    for (name, m) in models {
        let c = &m.confusion;
        out.push_str(&format!(
            "{name}: TP={} FP={} FN={} TN={} (positive class: incorrect)\n",
            c.tp, c.fp, c.fn_, c.tn
        ));
    }
    out
}

pub fn batch_table(r: &BatchReport) -> String {
    let rows: Vec<Vec<String>> = r
        .entries
        .iter()
        .map(|e| {
            vec![
                e.record_id.clone(),
                e.state.clone(),
                e.explanations.to_string(),
                e.stage.map(|s| format!("{s:?}")).unwrap_or_default(),
            ]
        })
        .collect();
    let mut out = render(&["Record", "State", "Explanations", "Failed stage"], &rows);
    out.push_str(&format!(
        "\n{} complete, {} quarantined, {} failed, {} explanations\n",
        r.completed, r.quarantined, r.failed, r.explanations
    ));
    out
}

pub fn detection_table(r: &DetectionReport) -> String {
    if let Some(reason) = &r.reason {
        return format!("{}: no verdicts ({reason})\n", r.record_id);
    }
    let rows: Vec<Vec<String>> = r
        .verdicts
        .iter()
        .map(|v| {
            vec![
                v.explanation_index.to_string(),
                v.title.clone(),
                v.label.to_string(),
                format!("{:.4}", v.score),
            ]
        })
        .collect();
    let mut out = format!("{} ({} model)\n", r.record_id, r.model_kind);
    out.push_str(&render(&["#", "Title", "Verdict", "Score"], &rows));
    for s in &r.skipped {
        out.push_str(&format!("skipped #{}: {}\n", s.explanation_index, s.reason));
    }
    out
}
