use serde::{Deserialize, Serialize};

use super::DeciderError;

/// Standard deviations below this count as a constant feature.
const MIN_STD: f64 = 1e-12;

/// Per-feature standardization fitted on a training split.
///
/// Uses the population standard deviation. Constant columns are dropped:
/// they scale to 0 and carry zero weight in any model trained on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    #[serde(default)]
    pub dropped: Vec<usize>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, DeciderError> {
        if rows.len() < 2 {
            return Err(DeciderError::TooFewExamples {
                needed: 2,
                got: rows.len(),
            });
        }
        let width = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(DeciderError::Width {
                expected: width,
                got: r.len(),
            });
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; width];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in stds.iter_mut().zip(r).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        let dropped: Vec<usize> = stds
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < MIN_STD)
            .map(|(i, _)| i)
            .collect();
        if !dropped.is_empty() {
            log::warn!("dropping constant feature columns {dropped:?}");
        }
        Ok(Self { means, stds, dropped })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn is_dropped(&self, column: usize) -> bool {
        self.stds[column] < MIN_STD
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, v)| {
                if self.is_dropped(i) {
                    0.0
                } else {
                    (v - self.means[i]) / self.stds[i]
                }
            })
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    /// Inverse of [`Scaler::transform_row`]; dropped columns come back as their mean.
    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, z)| {
                if self.is_dropped(i) {
                    self.means[i]
                } else {
                    z * self.stds[i] + self.means[i]
                }
            })
            .collect()
    }
}

/// Fits a scaler and applies it to the same rows.
pub fn standardize(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Scaler), DeciderError> {
    let s = Scaler::fit(rows)?;
    Ok((s.transform(rows), s))
}
