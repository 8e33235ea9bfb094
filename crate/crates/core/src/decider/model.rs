//! Linear detection models trained by full-batch (sub)gradient descent.
//!
//! Both models minimise `mean_i(w_i * loss(y_i f(x_i))) + (l2 / 2n) |w|^2`
//! over standardized features, where `f(x) = w.x + b` and `y = +1` for
//! Correct. Logistic regression uses the log-loss with a constant step;
//! the linear SVM uses the hinge loss with a step decaying as `1/sqrt(t)`.
//! The regularizer matches the usual `C = 1 / l2` convention.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Dataset, DeciderError, Label, Scaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lr")]
    LogisticRegression,
    #[serde(rename = "svm")]
    LinearSvm,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lr" | "logistic" | "logistic_regression" => Some(ModelKind::LogisticRegression),
            "svm" | "linear_svm" | "linearsvm" => Some(ModelKind::LinearSvm),
            _ => None,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "LR",
            ModelKind::LinearSvm => "SVM",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            learning_rate: 0.1,
            epochs: 2000,
            class_weighting: true,
            seed: 42,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), DeciderError> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(DeciderError::Hyperparams(format!("l2 {} must be >= 0", self.l2)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DeciderError::Hyperparams(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(DeciderError::Hyperparams("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scaler: Scaler,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Logit (LR) or signed margin (SVM); positive means Correct.
    pub score: f64,
}

impl DetectionModel {
    pub fn validate(&self) -> Result<(), DeciderError> {
        let w = self.weights.len();
        if self.feature_names.len() != w || self.scaler.width() != w || self.scaler.stds.len() != w {
            return Err(DeciderError::InvalidModel(format!(
                "{} weights, {} names, {} scaler columns",
                w,
                self.feature_names.len(),
                self.scaler.width()
            )));
        }
        if !self.weights.iter().chain([&self.bias]).all(|v| v.is_finite()) {
            return Err(DeciderError::InvalidModel("non-finite weight".into()));
        }
        Ok(())
    }

    /// Decision value on already-standardized features.
    pub fn decision_scaled(&self, z: &[f64]) -> f64 {
        self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn decision(&self, raw: &[f64]) -> f64 {
        self.decision_scaled(&self.scaler.transform_row(raw))
    }
}

/// Labels a raw (unscaled) feature row. A zero decision value is Incorrect.
pub fn predict(model: &DetectionModel, raw: &[f64]) -> Result<Prediction, DeciderError> {
    if raw.len() != model.weights.len() {
        return Err(DeciderError::Width {
            expected: model.weights.len(),
            got: raw.len(),
        });
    }
    let score = model.decision(raw);
    let label = if score > 0.0 { Label::Correct } else { Label::Incorrect };
    Ok(Prediction { label, score })
}

fn sample_weights(labels: &[Label], balanced: bool) -> Vec<f64> {
    if !balanced {
        return vec![1.0; labels.len()];
    }
    let n = labels.len() as f64;
    let incorrect = labels.iter().filter(|l| **l == Label::Incorrect).count() as f64;
    let correct = n - incorrect;
    labels
        .iter()
        .map(|l| match l {
            Label::Correct => n / (2.0 * correct),
            Label::Incorrect => n / (2.0 * incorrect),
        })
        .collect()
}

/// Numerically stable `1 / (1 + e^m)`.
fn sigmoid_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

pub fn train(data: &Dataset, kind: ModelKind, hp: &Hyperparams) -> Result<DetectionModel, DeciderError> {
    hp.validate()?;
    let (correct, incorrect) = data.class_counts();
    if correct == 0 || incorrect == 0 {
        return Err(DeciderError::SingleClass { correct, incorrect });
    }
    let scaler = Scaler::fit(&data.rows)?;
    let x = scaler.transform(&data.rows);
    let y: Vec<f64> = data.labels.iter().map(|l| l.sign()).collect();
    let sw = sample_weights(&data.labels, hp.class_weighting);
    let total_w: f64 = sw.iter().sum();
    let n = x.len() as f64;
    let d = data.width();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = vec![0.0; d];
    for epoch in 0..hp.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for ((xi, yi), si) in x.iter().zip(&y).zip(&sw) {
            let f: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b;
            let m = yi * f;
            let g = match kind {
                ModelKind::LogisticRegression => -yi * sigmoid_neg(m),
                ModelKind::LinearSvm if m < 1.0 => -yi,
                ModelKind::LinearSvm => 0.0,
            } * si;
            if g != 0.0 {
                for (gj, xj) in grad.iter_mut().zip(xi) {
                    *gj += g * xj;
                }
                grad_b += g;
            }
        }
        let step = match kind {
            ModelKind::LogisticRegression => hp.learning_rate,
            ModelKind::LinearSvm => hp.learning_rate / ((epoch + 1) as f64).sqrt(),
        };
        for (j, wj) in w.iter_mut().enumerate() {
            let reg = if scaler.is_dropped(j) { 0.0 } else { hp.l2 / n * *wj };
            *wj -= step * (grad[j] / total_w + reg);
        }
        b -= step * grad_b / total_w;
    }
    for j in &scaler.dropped {
        w[*j] = 0.0;
    }

    let model = DetectionModel {
        kind,
        feature_names: data.feature_names.clone(),
        weights: w,
        bias: b,
        scaler,
        hyperparams: *hp,
        seed: hp.seed,
    };
    model.validate()?;
    Ok(model)
}
