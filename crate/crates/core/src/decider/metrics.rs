//! Confusion counts and precision/recall/F1/accuracy.
//!
//! The positive class is `Incorrect`: the detector's job is to flag wrong
//! explanations. Per-class, macro and support-weighted figures are all
//! reported because none of them is privileged by the benchmark tables.

use serde::{Deserialize, Serialize};

use super::{DeciderError, Label};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Incorrect predicted as Incorrect.
    pub tp: u64,
    /// Correct predicted as Incorrect.
    pub fp: u64,
    /// Incorrect predicted as Correct.
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Correct predicted as Correct.
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Incorrect, Label::Incorrect) => self.tp += 1,
            (Label::Correct, Label::Incorrect) => self.fp += 1,
            (Label::Incorrect, Label::Correct) => self.fn_ += 1,
            (Label::Correct, Label::Correct) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (a, p) in pairs {
            c.record(a, p);
        }
        c
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub incorrect: ClassMetrics,
    pub correct: ClassMetrics,
    pub macro_avg: Averaged,
    pub weighted_avg: Averaged,
}

impl ModelMetrics {
    /// Headline figures: the positive (Incorrect) class.
    pub fn headline(&self) -> &ClassMetrics {
        &self.incorrect
    }
}

pub fn compute_metrics(c: &Confusion) -> Result<ModelMetrics, DeciderError> {
    let total = c.total();
    if total == 0 {
        return Err(DeciderError::EmptyConfusion);
    }
    let incorrect = ClassMetrics::from_counts(c.tp, c.fp, c.fn_);
    let correct = ClassMetrics::from_counts(c.tn, c.fn_, c.fp);
    let macro_avg = Averaged {
        precision: (incorrect.precision + correct.precision) / 2.0,
        recall: (incorrect.recall + correct.recall) / 2.0,
        f1: (incorrect.f1 + correct.f1) / 2.0,
    };
    let wi = incorrect.support as f64 / total as f64;
    let wc = correct.support as f64 / total as f64;
    let weighted_avg = Averaged {
        precision: wi * incorrect.precision + wc * correct.precision,
        recall: wi * incorrect.recall + wc * correct.recall,
        f1: wi * incorrect.f1 + wc * correct.f1,
    };
    Ok(ModelMetrics {
        confusion: *c,
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        incorrect,
        correct,
        macro_avg,
        weighted_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let m = compute_metrics(&Confusion::new(2, 1, 1, 6)).unwrap();
        assert!((m.incorrect.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.incorrect.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.incorrect.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        // Correct class: TP'=6, FP'=1, FN'=1.
        assert!((m.correct.precision - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct_predictions() {
        let m = compute_metrics(&Confusion::new(5, 0, 0, 9)).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_avg.f1, 1.0);
    }

    #[test]
    fn majority_predictor_on_skewed_split() {
        // 81 Correct, 19 Incorrect, always predicting Correct.
        let m = compute_metrics(&Confusion::new(0, 0, 19, 81)).unwrap();
        assert!((m.accuracy - 0.81).abs() < 1e-12);
        assert_eq!(m.incorrect.f1, 0.0);
        assert_eq!(m.incorrect.precision, 0.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(compute_metrics(&Confusion::default()).is_err());
    }
}
