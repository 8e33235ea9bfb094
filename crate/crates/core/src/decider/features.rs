//! The 24 similarity features of one explanation.
//!
//! Canonical order, basic stage before mutated within each category:
//!
//! | indices | category | definition |
//! |---|---|---|
//! | 0-5   | E-R | explanation vs each challenge response |
//! | 6-11  | R-R | response pairs (Why,How), (Why,Really), (How,Really) |
//! | 12-17 | Q-R | each question vs its own response |
//! | 18-23 | Q-Q | question pairs, same pair order as R-R |

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::challenger::{ChallengeKind, Stage};
use crate::embedder::{cosine_similarity, EmbedError, Embedding, EmbeddingProvider};
use crate::record::InterrogationRecord;

pub const FEATURE_COUNT: usize = 24;

pub const KIND_PAIRS: [(ChallengeKind, ChallengeKind); 3] = [
    (ChallengeKind::Why, ChallengeKind::How),
    (ChallengeKind::Why, ChallengeKind::Really),
    (ChallengeKind::How, ChallengeKind::Really),
];

const STAGES: [Stage; 2] = [Stage::Basic, Stage::Mutated];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureCategory {
    ExplanationResponse,
    ResponseResponse,
    QuestionResponse,
    QuestionQuestion,
}

impl FeatureCategory {
    fn prefix(self) -> &'static str {
        match self {
            FeatureCategory::ExplanationResponse => "er",
            FeatureCategory::ResponseResponse => "rr",
            FeatureCategory::QuestionResponse => "qr",
            FeatureCategory::QuestionQuestion => "qq",
        }
    }
}

/// What one feature compares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDef {
    pub name: String,
    pub category: FeatureCategory,
    pub stage: Stage,
    /// Challenge kinds whose question or response enter the feature.
    pub kinds: Vec<ChallengeKind>,
}

impl FeatureDef {
    pub fn involves(&self, kind: ChallengeKind) -> bool {
        self.kinds.contains(&kind)
    }
}

fn stage_word(s: Stage) -> &'static str {
    match s {
        Stage::Basic => "basic",
        Stage::Mutated => "mutated",
    }
}

static DEFS: LazyLock<Vec<FeatureDef>> = LazyLock::new(|| {
    let mut defs = Vec::with_capacity(FEATURE_COUNT);
    for cat in [
        FeatureCategory::ExplanationResponse,
        FeatureCategory::ResponseResponse,
        FeatureCategory::QuestionResponse,
        FeatureCategory::QuestionQuestion,
    ] {
        for stage in STAGES {
            let groups: Vec<Vec<ChallengeKind>> = match cat {
                FeatureCategory::ExplanationResponse | FeatureCategory::QuestionResponse => {
                    ChallengeKind::ALL.iter().map(|k| vec![*k]).collect()
                }
                _ => KIND_PAIRS.iter().map(|(a, b)| vec![*a, *b]).collect(),
            };
            for kinds in groups {
                let tail: Vec<String> = kinds.iter().map(|k| k.word().to_lowercase()).collect();
                defs.push(FeatureDef {
                    name: format!("{}_{}_{}", cat.prefix(), stage_word(stage), tail.join("_")),
                    category: cat,
                    stage,
                    kinds,
                });
            }
        }
    }
    defs
});

pub fn feature_defs() -> &'static [FeatureDef] {
    &DEFS
}

pub fn feature_names() -> Vec<&'static str> {
    DEFS.iter().map(|d| d.name.as_str()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn new(values: [f64; FEATURE_COUNT]) -> Result<Self, FeatureError> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= -1.0 && **v <= 1.0)) {
            return Err(FeatureError::OutOfRange(i, *v));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("explanation {index} of record {record_id} skipped: {reason}")]
    Incomplete {
        record_id: String,
        index: usize,
        reason: String,
    },
    #[error("feature {0} has value {1} outside [-1, 1]")]
    OutOfRange(usize, f64),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Texts of one explanation's 13 participants, keyed by stage and kind.
struct Texts<'a> {
    explanation: &'a str,
    questions: [[&'a str; 3]; 2],
    responses: [[&'a str; 3]; 2],
}

fn collect_texts<'a>(record: &'a InterrogationRecord, index: usize) -> Result<Texts<'a>, FeatureError> {
    let incomplete = |reason: String| FeatureError::Incomplete {
        record_id: record.record_id.clone(),
        index,
        reason,
    };
    let er = record
        .explanation(index)
        .ok_or_else(|| incomplete("no such explanation".into()))?;
    if let Some(why) = &er.mutation_skipped {
        return Err(incomplete(format!("mutation skipped: {why}")));
    }
    let mut questions = [[""; 3]; 2];
    let mut responses = [[""; 3]; 2];
    for (si, stage) in STAGES.iter().enumerate() {
        for kind in ChallengeKind::ALL {
            let turn = er
                .turn(*stage, kind)
                .ok_or_else(|| incomplete(format!("missing {stage:?} {kind} response")))?;
            questions[si][kind.position()] = turn.question.text.as_str();
            responses[si][kind.position()] = turn.response.as_deref().unwrap_or_default();
        }
    }
    Ok(Texts {
        explanation: er.explanation.body.as_str(),
        questions,
        responses,
    })
}

/// Computes the canonical 24-vector for one explanation of `record`.
pub fn extract_features(
    record: &InterrogationRecord,
    index: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<FeatureVector, FeatureError> {
    let texts = collect_texts(record, index)?;
    let e = embedder.embed(texts.explanation)?;
    let embed_row =
        |row: &[&str; 3]| -> Result<Vec<Embedding>, EmbedError> { row.iter().map(|t| embedder.embed(t)).collect() };
    let q = [embed_row(&texts.questions[0])?, embed_row(&texts.questions[1])?];
    let r = [embed_row(&texts.responses[0])?, embed_row(&texts.responses[1])?];

    let mut values = [0.0; FEATURE_COUNT];
    for (slot, def) in feature_defs().iter().enumerate() {
        let s = def.stage as usize;
        let k0 = def.kinds[0].position();
        values[slot] = match def.category {
            FeatureCategory::ExplanationResponse => cosine_similarity(&e, &r[s][k0])?,
            FeatureCategory::QuestionResponse => cosine_similarity(&q[s][k0], &r[s][k0])?,
            FeatureCategory::ResponseResponse => cosine_similarity(&r[s][k0], &r[s][def.kinds[1].position()])?,
            FeatureCategory::QuestionQuestion => cosine_similarity(&q[s][k0], &q[s][def.kinds[1].position()])?,
        };
    }
    FeatureVector::new(values)
}
