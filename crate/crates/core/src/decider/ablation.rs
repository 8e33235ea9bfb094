use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{cross_validate, feature_defs, CvReport, Dataset, DeciderError, Hyperparams, ModelKind, FEATURE_COUNT};
use crate::challenger::{ChallengeKind, Stage};
use crate::par::Execution;

/// Which challenge information to withhold from the detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSpec {
    None,
    /// Remove every feature that uses a question or response of these kinds.
    DropKinds(BTreeSet<ChallengeKind>),
    /// Remove the 12 features of one stage.
    DropStage(Stage),
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationSpec::None => f.write_str("all challenges"),
            AblationSpec::DropKinds(ks) => {
                let names: Vec<&str> = ks.iter().map(|k| k.word()).collect();
                write!(f, "without {}", names.join("+"))
            }
            AblationSpec::DropStage(Stage::Basic) => f.write_str("without basic"),
            AblationSpec::DropStage(Stage::Mutated) => f.write_str("without mutation"),
        }
    }
}

/// Canonical indices of the features kept under `spec`.
pub fn retained_features(spec: &AblationSpec) -> Vec<usize> {
    feature_defs()
        .iter()
        .enumerate()
        .filter(|(_, d)| match spec {
            AblationSpec::None => true,
            AblationSpec::DropKinds(ks) => !ks.iter().any(|k| d.involves(*k)),
            AblationSpec::DropStage(s) => d.stage != *s,
        })
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub spec: AblationSpec,
    pub retained: Vec<String>,
    pub cv: CvReport,
}

/// Cross-validates on the features that survive `spec`.
pub fn ablate(
    data: &Dataset,
    spec: &AblationSpec,
    kind: ModelKind,
    hp: &Hyperparams,
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<AblationReport, DeciderError> {
    if data.width() != FEATURE_COUNT {
        return Err(DeciderError::Width {
            expected: FEATURE_COUNT,
            got: data.width(),
        });
    }
    let keep = retained_features(spec);
    if keep.is_empty() {
        return Err(DeciderError::NoFeatures);
    }
    let reduced = data.select_features(&keep);
    let cv = cross_validate(&reduced, kind, hp, k, seed, exec)?;
    Ok(AblationReport {
        spec: spec.clone(),
        retained: reduced.feature_names,
        cv,
    })
}
