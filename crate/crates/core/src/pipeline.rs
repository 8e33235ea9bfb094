//! End-to-end interrogation, batch runs and detection.
//!
//! One interrogation runs, in order: base question, enquiry, explanation
//! parsing, then per explanation: basic-question generation in a dedicated
//! session, mutation, and the six challenge turns in the interrogation
//! session. A failing stage quarantines the record; everything collected
//! before the failure is kept.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::challenger::{
    generate_basic_challenges, mutate_all, run_challenges, ChallengeKind, ChallengeQuestion, ChallengerError,
    KnowledgeBase, KnowledgeEntry, MutationPlan, Stage,
};
use crate::decider::{extract_features, feature_names, predict, DetectionModel, Label, FEATURE_COUNT};
use crate::embedder::EmbeddingProvider;
use crate::enquirer::{ask_base, ask_enquiry, parse_explanations, BaseQuery, EnquiryStyle};
use crate::gateway::{ChatSession, Gateway, GenerationParams, TranscriptFile};
use crate::par::{self, Execution};
use crate::record::{
    ChallengeTurn, ExplanationRecord, InterrogationRecord, PipelineStage, RecordStatus, SCHEMA_VERSION,
};
use crate::store::{validate_id, BenchmarkEntry, Store, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid base query {record_id}: {message}")]
    InvalidQuery { record_id: String, message: String },
    #[error("model expects unknown feature {0:?}")]
    UnknownFeature(String),
    #[error(transparent)]
    Challenger(#[from] ChallengerError),
}

/// Everything an interrogation needs besides the query itself.
pub struct PipelineContext<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn EmbeddingProvider,
    pub kb: &'a KnowledgeBase,
    pub plan: MutationPlan,
    pub params: GenerationParams,
    pub enquiry_style: EnquiryStyle,
    /// Stamp records with time 0.
    pub fixed_clock: bool,
}

impl PipelineContext<'_> {
    fn now(&self) -> u64 {
        if self.fixed_clock {
            return 0;
        }
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

pub fn interrogation_session_id(record_id: &str) -> String {
    format!("{record_id}/interrogation")
}

pub fn generator_session_id(record_id: &str, explanation_index: usize) -> String {
    format!("{record_id}/generator-{explanation_index}")
}

/// A finished (complete or quarantined) record plus the transcript it references.
#[derive(Debug, Clone, PartialEq)]
pub struct Interrogation {
    pub record: InterrogationRecord,
    pub transcript: TranscriptFile,
}

struct Run<'c, 'a> {
    ctx: &'c PipelineContext<'a>,
    record: InterrogationRecord,
    main: Option<ChatSession>,
    generators: Vec<ChatSession>,
}

struct Failure {
    stage: PipelineStage,
    explanation_index: Option<usize>,
    error: String,
}

fn fail(stage: PipelineStage, explanation_index: Option<usize>, e: impl ToString) -> Failure {
    Failure {
        stage,
        explanation_index,
        error: e.to_string(),
    }
}

impl Run<'_, '_> {
    fn stages(&mut self, query: &BaseQuery) -> Result<(), Failure> {
        let id = self.record.record_id.clone();
        let base = |e| fail(PipelineStage::Base, None, e);
        let mut session = self
            .ctx
            .gateway
            .open_named_session(interrogation_session_id(&id), true, self.ctx.params.clone())
            .map_err(base)?;
        self.record.sessions.push(session.id().to_string());
        let result = ask_base(&mut session, query);
        self.main = Some(session);
        let base_response = result.map_err(|e| fail(PipelineStage::Base, None, e))?;
        self.record.base_response = Some(base_response.clone());

        let session = self.main.as_mut().expect("session opened above");
        let enquiry = ask_enquiry(session, query, &base_response, self.ctx.enquiry_style)
            .map_err(|e| fail(PipelineStage::Enquiry, None, e))?;
        self.record.enquiry_response = Some(enquiry.clone());

        let explanations =
            parse_explanations(&enquiry, &id).map_err(|e| fail(PipelineStage::ExplanationParse, None, e))?;
        self.record.explanations = explanations.into_iter().map(ExplanationRecord::new).collect();

        for i in 0..self.record.explanations.len() {
            self.explanation(i)?;
        }
        Ok(())
    }

    fn explanation(&mut self, i: usize) -> Result<(), Failure> {
        let id = self.record.record_id.clone();
        let gen_fail = |e| fail(PipelineStage::Generation, Some(i), e);
        let mut generator = self
            .ctx
            .gateway
            .open_named_session(generator_session_id(&id, i), true, self.ctx.params.clone())
            .map_err(gen_fail)?;
        self.record.sessions.push(generator.id().to_string());
        self.record.explanations[i].generator_session = Some(generator.id().to_string());
        let explanation = self.record.explanations[i].explanation.clone();
        let generated = generate_basic_challenges(&mut generator, &explanation);
        self.generators.push(generator);
        let basics = generated.map_err(|e| fail(PipelineStage::Generation, Some(i), e))?;
        self.record.explanations[i].basic = basics.iter().cloned().map(unanswered).collect();

        match mutate_all(&basics, &self.ctx.plan, self.ctx.kb, self.ctx.embedder) {
            Ok(mutated) => self.record.explanations[i].mutated = mutated.into_iter().map(unanswered).collect(),
            Err(e @ ChallengerError::NoCandidate { .. }) => {
                log::info!("{id}#{i}: mutation skipped: {e}");
                self.record.explanations[i].mutation_skipped = Some(e.to_string());
            }
            Err(e) => return Err(fail(PipelineStage::Mutation, Some(i), e)),
        }

        for stage in [Stage::Basic, Stage::Mutated] {
            let n = self.record.explanations[i].turns(stage).len();
            for t in 0..n {
                let q = self.record.explanations[i].turns(stage)[t].question.clone();
                let session = self.main.as_mut().expect("interrogation session open");
                let reply = run_challenges(session, std::slice::from_ref(&q))
                    .map_err(|e| fail(PipelineStage::Challenge, Some(i), e))?;
                let er = &mut self.record.explanations[i];
                let turns = match stage {
                    Stage::Basic => &mut er.basic,
                    Stage::Mutated => &mut er.mutated,
                };
                turns[t].response = Some(reply[0].text.clone());
            }
        }
        Ok(())
    }

    fn transcript(&self) -> TranscriptFile {
        let mut entries = Vec::new();
        if let Some(s) = &self.main {
            entries.extend(s.transcript());
        }
        for g in &self.generators {
            entries.extend(g.transcript());
        }
        TranscriptFile { entries }
    }
}

fn unanswered(question: ChallengeQuestion) -> ChallengeTurn {
    ChallengeTurn {
        question,
        response: None,
    }
}

/// Runs one interrogation. Stage failures yield a quarantined record, not an error.
pub fn interrogate(query: &BaseQuery, ctx: &PipelineContext<'_>) -> Result<Interrogation, PipelineError> {
    let record_id = query.context.source_id.clone();
    validate_id(&record_id)?;
    query.validate().map_err(|e| PipelineError::InvalidQuery {
        record_id: record_id.clone(),
        message: e.to_string(),
    })?;
    let mut run = Run {
        ctx,
        record: InterrogationRecord {
            schema_version: SCHEMA_VERSION,
            record_id: record_id.clone(),
            base_query: query.clone(),
            backend_id: ctx.gateway.backend().id().to_string(),
            model: ctx.params.model_name.clone(),
            started_at: ctx.now(),
            finished_at: 0,
            status: RecordStatus::Complete,
            base_response: None,
            enquiry_response: None,
            explanations: Vec::new(),
            sessions: Vec::new(),
            transcript: Store::transcript_rel(&record_id),
        },
        main: None,
        generators: Vec::new(),
    };
    if let Err(f) = run.stages(query) {
        log::warn!("{record_id} quarantined at {:?}: {}", f.stage, f.error);
        run.record.status = RecordStatus::Quarantined {
            stage: f.stage,
            explanation_index: f.explanation_index,
            error: f.error,
        };
    }
    run.record.finished_at = ctx.now();
    Ok(Interrogation {
        transcript: run.transcript(),
        record: run.record,
    })
}

/// Writes the transcript, then the record that references it.
pub fn persist(store: &Store, result: &Interrogation) -> Result<(), StoreError> {
    store.save_transcript(&result.record.record_id, &result.transcript)?;
    store.save_record(&result.record)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryOutcome {
    pub record_id: String,
    /// "complete", "quarantined" or "failed".
    pub state: String,
    pub explanations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<PipelineStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub completed: usize,
    pub quarantined: usize,
    /// Entries that produced no record at all (invalid input or write failure).
    pub failed: usize,
    pub explanations: usize,
    pub entries: Vec<EntryOutcome>,
}

/// Interrogates every entry with at most `concurrency` in flight and stores
/// the results. One entry's failure never stops the others.
pub fn run_benchmark(
    entries: &[BenchmarkEntry],
    ctx: &PipelineContext<'_>,
    store: &Store,
    concurrency: usize,
    exec: Execution,
) -> BatchReport {
    let outcomes = par::map_bounded(exec, concurrency.max(1), entries, |entry| {
        let run = interrogate(&entry.base_query(), ctx)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                persist(store, &r).map_err(|e| e.to_string())?;
                Ok(r.record)
            });
        match run {
            Ok(rec) => {
                let (state, stage, error) = match &rec.status {
                    RecordStatus::Complete => ("complete", None, None),
                    RecordStatus::Quarantined { stage, error, .. } => {
                        ("quarantined", Some(*stage), Some(error.clone()))
                    }
                };
                EntryOutcome {
                    record_id: rec.record_id.clone(),
                    state: state.into(),
                    explanations: rec.explanations.len(),
                    stage,
                    error,
                }
            }
            Err(e) => {
                log::error!("{}: {e}", entry.source_id);
                EntryOutcome {
                    record_id: entry.source_id.clone(),
                    state: "failed".into(),
                    explanations: 0,
                    stage: None,
                    error: Some(e),
                }
            }
        }
    });
    let count = |s: &str| outcomes.iter().filter(|o| o.state == s).count();
    BatchReport {
        completed: count("complete"),
        quarantined: count("quarantined"),
        failed: count("failed"),
        explanations: outcomes.iter().map(|o| o.explanations).sum(),
        entries: outcomes,
    }
}

/// Adds the basic questions of complete records to the knowledge base file,
/// in record order. Returns the number of new sentences.
pub fn accumulate_kb(
    kb_path: &Path,
    records: &[InterrogationRecord],
    embedder: &dyn EmbeddingProvider,
) -> Result<usize, ChallengerError> {
    let mut kb = if kb_path.exists() {
        KnowledgeBase::load(kb_path, embedder)?
    } else {
        KnowledgeBase::new()
    };
    let mut sorted: Vec<&InterrogationRecord> = records.iter().filter(|r| r.is_complete()).collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut added = 0;
    for r in sorted {
        for er in &r.explanations {
            for t in &er.basic {
                let entry = KnowledgeEntry {
                    sentence: t.question.text.clone(),
                    source_id: t.question.source_id(),
                };
                if kb.insert(entry, embedder)? {
                    added += 1;
                }
            }
        }
    }
    kb.save(kb_path)?;
    Ok(added)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub explanation_index: usize,
    pub title: String,
    pub label: Label,
    pub score: f64,
    /// Feature name to value, for all 24 features.
    pub features: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedExplanation {
    pub explanation_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub record_id: String,
    pub model_kind: String,
    pub verdicts: Vec<Verdict>,
    pub skipped: Vec<SkippedExplanation>,
    /// Set when the record as a whole could not be judged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Judges each explanation of `record`. Explanations lacking any of the six
/// answered turns are skipped with a reason.
pub fn detect(
    record: &InterrogationRecord,
    model: &DetectionModel,
    embedder: &dyn EmbeddingProvider,
) -> Result<DetectionReport, PipelineError> {
    let names = feature_names();
    let columns = model
        .feature_names
        .iter()
        .map(|n| {
            names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| PipelineError::UnknownFeature(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = DetectionReport {
        record_id: record.record_id.clone(),
        model_kind: model.kind.to_string(),
        verdicts: Vec::new(),
        skipped: Vec::new(),
        reason: None,
    };
    if let RecordStatus::Quarantined { stage, error, .. } = &record.status {
        report.reason = Some(format!("record quarantined at {stage:?}: {error}"));
        return Ok(report);
    }
    for (i, er) in record.explanations.iter().enumerate() {
        match extract_features(record, i, embedder) {
            Ok(fv) => {
                let row: Vec<f64> = columns.iter().map(|c| fv.values()[*c]).collect();
                let p = predict(model, &row).map_err(|e| PipelineError::InvalidQuery {
                    record_id: record.record_id.clone(),
                    message: e.to_string(),
                })?;
                report.verdicts.push(Verdict {
                    explanation_index: i,
                    title: er.explanation.title.clone(),
                    label: p.label,
                    score: p.score,
                    features: names
                        .iter()
                        .zip(fv.values())
                        .map(|(n, v)| (n.to_string(), *v))
                        .collect(),
                });
            }
            Err(e) => report.skipped.push(SkippedExplanation {
                explanation_index: i,
                reason: e.to_string(),
            }),
        }
    }
    debug_assert!(report.verdicts.iter().all(|v| v.features.len() == FEATURE_COUNT));
    Ok(report)
}

/// Count of answered challenge turns across all explanations.
pub fn answered_turns(record: &InterrogationRecord) -> usize {
    record
        .explanations
        .iter()
        .map(|er| {
            [Stage::Basic, Stage::Mutated]
                .iter()
                .map(|s| ChallengeKind::ALL.iter().filter(|k| er.turn(*s, **k).is_some()).count())
                .sum::<usize>()
        })
        .sum()
}
