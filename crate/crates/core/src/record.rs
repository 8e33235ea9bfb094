//! The persisted artifact of one interrogation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::challenger::{ChallengeKind, ChallengeQuestion, Stage};
use crate::enquirer::{BaseQuery, Explanation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
#[error("record {record_id} is invalid: {reason}")]
pub struct RecordInvalid {
    pub record_id: String,
    pub reason: String,
}

/// Pipeline stage, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Base,
    Enquiry,
    ExplanationParse,
    Generation,
    Mutation,
    Challenge,
    Persist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RecordStatus {
    Complete,
    Quarantined {
        stage: PipelineStage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        explanation_index: Option<usize>,
        error: String,
    },
}

/// A challenge question and, once asked, the reply it received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeTurn {
    pub question: ChallengeQuestion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub explanation: Explanation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_session: Option<String>,
    #[serde(default)]
    pub basic: Vec<ChallengeTurn>,
    #[serde(default)]
    pub mutated: Vec<ChallengeTurn>,
    /// Why mutation was not applied, when it was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_skipped: Option<String>,
}

impl ExplanationRecord {
    pub fn new(explanation: Explanation) -> Self {
        Self {
            explanation,
            generator_session: None,
            basic: Vec::new(),
            mutated: Vec::new(),
            mutation_skipped: None,
        }
    }

    pub fn turns(&self, stage: Stage) -> &[ChallengeTurn] {
        match stage {
            Stage::Basic => &self.basic,
            Stage::Mutated => &self.mutated,
        }
    }

    /// The answered turn for `(stage, kind)`, if present.
    pub fn turn(&self, stage: Stage, kind: ChallengeKind) -> Option<&ChallengeTurn> {
        self.turns(stage)
            .iter()
            .find(|t| t.question.kind == kind && t.response.is_some())
    }

    /// All three basic and all three mutated questions answered.
    pub fn is_complete(&self) -> bool {
        [Stage::Basic, Stage::Mutated]
            .iter()
            .all(|s| ChallengeKind::ALL.iter().all(|k| self.turn(*s, *k).is_some()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterrogationRecord {
    pub schema_version: u32,
    pub record_id: String,
    pub base_query: BaseQuery,
    pub backend_id: String,
    pub model: String,
    /// Unix seconds; fixed at 0 under a deterministic clock.
    pub started_at: u64,
    pub finished_at: u64,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enquiry_response: Option<String>,
    #[serde(default)]
    pub explanations: Vec<ExplanationRecord>,
    /// Interrogation session first, then generator sessions in creation order.
    #[serde(default)]
    pub sessions: Vec<String>,
    /// Path of the transcript file, relative to the store root.
    pub transcript: String,
}

impl InterrogationRecord {
    pub fn is_complete(&self) -> bool {
        self.status == RecordStatus::Complete
    }

    pub fn explanation(&self, index: usize) -> Option<&ExplanationRecord> {
        self.explanations.get(index)
    }

    pub fn validate(&self) -> Result<(), RecordInvalid> {
        let bad = |reason: String| RecordInvalid {
            record_id: self.record_id.clone(),
            reason,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.record_id.trim().is_empty() {
            return Err(bad("empty record_id".into()));
        }
        for (i, er) in self.explanations.iter().enumerate() {
            let e = &er.explanation;
            if e.index != i {
                return Err(bad(format!("explanation indices not contiguous at position {i}")));
            }
            if e.parent_record != self.record_id {
                return Err(bad(format!("explanation {i} points at record {}", e.parent_record)));
            }
            if e.title.trim().is_empty() || e.body.trim().is_empty() {
                return Err(bad(format!("explanation {i} has an empty title or body")));
            }
            for stage in [Stage::Basic, Stage::Mutated] {
                let turns = er.turns(stage);
                if turns.len() > 3 {
                    return Err(bad(format!("explanation {i} has {} {stage:?} questions", turns.len())));
                }
                for (t, kind) in turns.iter().zip(ChallengeKind::ALL) {
                    let q = &t.question;
                    if q.kind != kind || q.stage != stage {
                        return Err(bad(format!(
                            "explanation {i}: {stage:?} questions out of canonical order"
                        )));
                    }
                    if q.parent_explanation.record_id != self.record_id || q.parent_explanation.index != i {
                        return Err(bad(format!(
                            "explanation {i}: question points at {}",
                            q.parent_explanation
                        )));
                    }
                    if (stage == Stage::Mutated) != q.mutation_info.is_some() {
                        return Err(bad(format!("explanation {i}: mutation_info inconsistent with stage")));
                    }
                    if t.response.as_deref().is_some_and(|r| r.trim().is_empty()) {
                        return Err(bad(format!("explanation {i}: empty challenge response")));
                    }
                }
            }
            if self.is_complete() {
                let basic_done = ChallengeKind::ALL.iter().all(|k| er.turn(Stage::Basic, *k).is_some());
                let mutated_ok = er.is_complete() || (er.mutated.is_empty() && er.mutation_skipped.is_some());
                if !basic_done || !mutated_ok {
                    return Err(bad(format!("complete record has unfinished explanation {i}")));
                }
            }
        }
        if self.is_complete() && (self.base_response.is_none() || self.explanations.is_empty()) {
            return Err(bad("complete record lacks a base response or explanations".into()));
        }
        Ok(())
    }
}
