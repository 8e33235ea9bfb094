//! Consistency features, detection models and their evaluation.

mod ablation;
mod cv;
mod features;
mod metrics;
mod model;
mod scaler;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{ablate, retained_features, AblationReport, AblationSpec};
pub use cv::{cross_validate, stratified_folds, CvReport, FoldSummary};
pub use features::{
    extract_features, feature_defs, feature_names, FeatureCategory, FeatureDef, FeatureError, FeatureVector,
    FEATURE_COUNT, KIND_PAIRS,
};
pub use metrics::{compute_metrics, Averaged, ClassMetrics, Confusion, ModelMetrics};
pub use model::{predict, train, DetectionModel, Hyperparams, ModelKind, Prediction};
pub use scaler::{standardize, Scaler};

use crate::challenger::ExplanationRef;

#[derive(Debug, Error)]
pub enum DeciderError {
    #[error("training data must contain both classes (got {correct} correct, {incorrect} incorrect)")]
    SingleClass { correct: usize, incorrect: usize },
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("fold count {0} must be at least 2")]
    TooFewFolds(usize),
    #[error("fold count {k} exceeds the minority class size {minority}")]
    FoldsExceedMinority { k: usize, minority: usize },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error("ablation leaves no features")]
    NoFeatures,
    #[error("metrics need at least one prediction")]
    EmptyConfusion,
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("model is invalid: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
}

impl Label {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" | "1" | "true" => Some(Label::Correct),
            "incorrect" | "0" | "false" => Some(Label::Incorrect),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Correct => Label::Incorrect,
            Label::Incorrect => Label::Correct,
        }
    }

    /// Training target: +1 for Correct, -1 for Incorrect.
    pub(crate) fn sign(self) -> f64 {
        match self {
            Label::Correct => 1.0,
            Label::Incorrect => -1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Correct => "correct",
            Label::Incorrect => "incorrect",
        })
    }
}

/// A feature vector with its human-assigned label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: Label,
    pub explanation_ref: ExplanationRef,
}

/// Row-major design matrix with labels, possibly restricted to a feature subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub refs: Vec<String>,
}

impl Dataset {
    pub fn from_examples(examples: &[LabeledExample]) -> Self {
        Self {
            feature_names: feature_names().into_iter().map(str::to_string).collect(),
            rows: examples.iter().map(|e| e.features.values().to_vec()).collect(),
            labels: examples.iter().map(|e| e.label).collect(),
            refs: examples.iter().map(|e| e.explanation_ref.to_string()).collect(),
        }
    }

    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self, DeciderError> {
        if let Some(r) = rows.iter().find(|r| r.len() != feature_names.len()) {
            return Err(DeciderError::Width {
                expected: feature_names.len(),
                got: r.len(),
            });
        }
        if rows.len() != labels.len() {
            return Err(DeciderError::Width {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let refs = (0..rows.len()).map(|i| format!("row#{i}")).collect();
        Ok(Self {
            feature_names,
            rows,
            labels,
            refs,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// (correct, incorrect) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let incorrect = self.labels.iter().filter(|l| **l == Label::Incorrect).count();
        (self.labels.len() - incorrect, incorrect)
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Self {
        Self {
            feature_names: columns.iter().map(|c| self.feature_names[*c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| columns.iter().map(|c| r[*c]).collect())
                .collect(),
            labels: self.labels.clone(),
            refs: self.refs.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|i| self.rows[*i].clone()).collect(),
            labels: indices.iter().map(|i| self.labels[*i]).collect(),
            refs: indices.iter().map(|i| self.refs[*i].clone()).collect(),
        }
    }
}
