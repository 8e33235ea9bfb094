use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_metrics, predict, train, Confusion, Dataset, DeciderError, Hyperparams, Label, ModelKind, ModelMetrics,
};
use crate::par::{self, Execution};

/// Stratified k-fold partition of `labels`.
///
/// Each class is shuffled with a seeded ChaCha8 stream and dealt round-robin;
/// the dealing position carries over between classes, so overall fold sizes
/// differ by at most one and every class is spread within one example.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DeciderError> {
    if k < 2 {
        return Err(DeciderError::TooFewFolds(k));
    }
    let correct: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == Label::Correct).collect();
    let incorrect: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == Label::Incorrect).collect();
    let minority = correct.len().min(incorrect.len());
    if k > minority {
        return Err(DeciderError::FoldsExceedMinority { k, minority });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0usize;
    for mut class in [correct, incorrect] {
        class.shuffle(&mut rng);
        for i in class {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test_size: usize,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub kind: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub feature_count: usize,
    pub metrics: ModelMetrics,
    pub folds: Vec<FoldSummary>,
}

/// k-fold cross-validation with metrics from the pooled confusion matrix.
///
/// Each fold fits its own scaler and model on the remaining folds. Folds are
/// independent and may run in parallel; the result does not depend on `exec`.
pub fn cross_validate(
    data: &Dataset,
    kind: ModelKind,
    hp: &Hyperparams,
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<CvReport, DeciderError> {
    let folds = stratified_folds(&data.labels, k, seed)?;
    let results = par::map_range(exec, k, |f| -> Result<FoldSummary, DeciderError> {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let model = train(&data.subset(&train_idx), kind, hp)?;
        let mut confusion = Confusion::default();
        for i in &folds[f] {
            confusion.record(data.labels[*i], predict(&model, &data.rows[*i])?.label);
        }
        Ok(FoldSummary {
            fold: f,
            test_size: folds[f].len(),
            confusion,
        })
    });
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut pooled = Confusion::default();
    folds.iter().for_each(|f| pooled.merge(&f.confusion));
    Ok(CvReport {
        kind,
        k,
        seed,
        feature_count: data.width(),
        metrics: compute_metrics(&pooled)?,
        folds,
    })
}
