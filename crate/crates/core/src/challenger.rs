//! Challenge question generation, metamorphic mutation and questioning.
//!
//! Basic Why/How/Really questions are generated in a session that has never
//! seen the interrogation conversation. Each basic question is then mutated
//! by appending a redundant sentence through a subordinate clause; the
//! sentence comes from a knowledge base (MR1) or from the sibling basic
//! questions (MR2), whichever candidate is closest under cosine similarity.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{cosine_similarity, EmbedError, Embedding, EmbeddingProvider};
use crate::enquirer::Explanation;
use crate::gateway::{ChatSession, GatewayError};
use crate::par::{self, Execution};

/// Subordinate clauses joining a redundant sentence to a question.
pub const DEFAULT_CLAUSES: [&str; 4] = ["I heard that", "No matter what", "I do not care", "without considering"];

#[derive(Debug, Error)]
pub enum ChallengerError {
    #[error("generator returned an empty {kind} question for explanation {explanation}")]
    EmptyGeneration { kind: ChallengeKind, explanation: usize },
    #[error("no candidate sentence for {relation} mutation of the {kind} question")]
    NoCandidate {
        kind: ChallengeKind,
        relation: MutationRelation,
    },
    #[error("invalid challenge input: {0}")]
    Invalid(String),
    #[error("knowledge base: {0}")]
    KnowledgeBase(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChallengeKind {
    Why,
    How,
    Really,
}

impl ChallengeKind {
    pub const ALL: [ChallengeKind; 3] = [ChallengeKind::Why, ChallengeKind::How, ChallengeKind::Really];

    pub fn word(self) -> &'static str {
        match self {
            ChallengeKind::Why => "Why",
            ChallengeKind::How => "How",
            ChallengeKind::Really => "Really",
        }
    }

    /// Position in canonical order, starting at 0.
    pub fn position(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "why" => Some(ChallengeKind::Why),
            "how" => Some(ChallengeKind::How),
            "really" => Some(ChallengeKind::Really),
            _ => None,
        }
    }
}

impl fmt::Display for ChallengeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Basic,
    Mutated,
}

impl Stage {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Some(Stage::Basic),
            "mutated" | "mutation" => Some(Stage::Mutated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationRelation {
    /// Redundant sentence drawn from the knowledge base.
    MR1,
    /// Redundant sentence drawn from the sibling basic questions.
    MR2,
}

impl fmt::Display for MutationRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationRelation::MR1 => "MR1",
            MutationRelation::MR2 => "MR2",
        })
    }
}

/// Points at an explanation inside a record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExplanationRef {
    pub record_id: String,
    pub index: usize,
}

impl fmt::Display for ExplanationRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.record_id, self.index)
    }
}

impl ExplanationRef {
    pub fn of(e: &Explanation) -> Self {
        Self {
            record_id: e.parent_record.clone(),
            index: e.index,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (record_id, index) = s.rsplit_once('#')?;
        Some(Self {
            record_id: record_id.to_string(),
            index: index.parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationInfo {
    pub relation: MutationRelation,
    pub redundant_sentence: String,
    pub clause: String,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeQuestion {
    pub kind: ChallengeKind,
    pub stage: Stage,
    pub text: String,
    pub parent_explanation: ExplanationRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_info: Option<MutationInfo>,
}

impl ChallengeQuestion {
    pub fn basic(kind: ChallengeKind, text: impl Into<String>, parent: ExplanationRef) -> Self {
        Self {
            kind,
            stage: Stage::Basic,
            text: text.into(),
            parent_explanation: parent,
            mutation_info: None,
        }
    }

    /// Identifier used as the source of an MR2 redundant sentence.
    pub fn source_id(&self) -> String {
        format!("{}/{:?}/{}", self.parent_explanation, self.stage, self.kind).to_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeResponse {
    pub kind: ChallengeKind,
    pub stage: Stage,
    pub text: String,
}

/// Instruction sent to the isolated generator session.
pub fn generation_prompt(kind: ChallengeKind, explanation: &Explanation) -> String {
    format!(
        "Generate a question that starts with {} to challenge the following explanation: {}",
        kind.word(),
        explanation.body.trim()
    )
}

const QUOTE_PAIRS: [(char, char); 5] = [
    ('"', '"'),
    ('\'', '\''),
    ('\u{201c}', '\u{201d}'),
    ('\u{2018}', '\u{2019}'),
    ('`', '`'),
];

/// Trims whitespace and at most one symmetric pair of wrapping quotes.
pub fn strip_generated_question(raw: &str) -> String {
    let t = raw.trim();
    for (open, close) in QUOTE_PAIRS {
        if let Some(inner) = t.strip_prefix(open).and_then(|s| s.strip_suffix(close)) {
            return inner.trim().to_string();
        }
    }
    t.to_string()
}

/// Generates the Why/How/Really questions for one explanation in `generator`,
/// which must be a session dedicated to this explanation.
pub fn generate_basic_challenges(
    generator: &mut ChatSession,
    explanation: &Explanation,
) -> Result<Vec<ChallengeQuestion>, ChallengerError> {
    if explanation.body.trim().is_empty() {
        return Err(ChallengerError::Invalid("explanation body is empty".into()));
    }
    if !generator.messages().is_empty() {
        return Err(ChallengerError::Invalid(format!(
            "generator session {} is not fresh",
            generator.id()
        )));
    }
    let parent = ExplanationRef::of(explanation);
    let mut out = Vec::with_capacity(3);
    for kind in ChallengeKind::ALL {
        let reply = match generator.send(&generation_prompt(kind, explanation)) {
            Err(GatewayError::EmptyReply(_)) => String::new(),
            other => other?,
        };
        let text = strip_generated_question(&reply);
        if text.is_empty() {
            return Err(ChallengerError::EmptyGeneration {
                kind,
                explanation: explanation.index,
            });
        }
        if !text.to_lowercase().starts_with(&kind.word().to_lowercase()) {
            log::warn!("{kind} question for {parent} does not start with {kind}: {text:?}");
        }
        out.push(ChallengeQuestion::basic(kind, text, parent.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub sentence: String,
    pub source_id: String,
}

/// Redundant-sentence pool for MR1, with embeddings computed on insertion.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
    embeddings: Vec<Embedding>,
    seen: HashSet<String>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = KnowledgeEntry>,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self, ChallengerError> {
        let mut kb = Self::new();
        for e in entries {
            kb.insert(e, embedder)?;
        }
        Ok(kb)
    }

    /// Reads a JSON array of `{"sentence", "source_id"}` objects.
    pub fn load(path: &Path, embedder: &dyn EmbeddingProvider) -> Result<Self, ChallengerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChallengerError::KnowledgeBase(format!("{}: {e}", path.display())))?;
        let entries: Vec<KnowledgeEntry> = serde_json::from_str(&text)
            .map_err(|e| ChallengerError::KnowledgeBase(format!("{}: {e}", path.display())))?;
        Self::from_entries(entries, embedder)
    }

    pub fn save(&self, path: &Path) -> Result<(), ChallengerError> {
        let body = serde_json::to_string_pretty(&self.entries).expect("knowledge entries serialize");
        std::fs::write(path, body + "\n")
            .map_err(|e| ChallengerError::KnowledgeBase(format!("{}: {e}", path.display())))
    }

    /// Adds an entry; returns false when the sentence is already present.
    pub fn insert(&mut self, entry: KnowledgeEntry, embedder: &dyn EmbeddingProvider) -> Result<bool, ChallengerError> {
        let sentence = entry.sentence.trim().to_string();
        if sentence.is_empty() {
            return Err(ChallengerError::KnowledgeBase("empty sentence".into()));
        }
        if !self.seen.insert(sentence.clone()) {
            return Ok(false);
        }
        self.embeddings.push(embedder.embed(&sentence)?);
        self.entries.push(KnowledgeEntry {
            sentence,
            source_id: entry.source_id,
        });
        Ok(true)
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Index of the candidate with the highest cosine to `query`; ties go to the lowest index.
pub fn argmax_cosine(
    query: &Embedding,
    candidates: &[Embedding],
    exec: Execution,
) -> Result<Option<usize>, EmbedError> {
    let scores = par::map(exec, candidates, |c| cosine_similarity(query, c));
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = s?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    Ok(best.map(|(i, _)| i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub sentence: String,
    pub source_id: String,
    pub candidate_index: usize,
}

/// Picks the redundant sentence for mutating `basic_q` under `relation`.
pub fn select_redundant_sentence(
    basic_q: &ChallengeQuestion,
    relation: MutationRelation,
    kb: &KnowledgeBase,
    peers: &[ChallengeQuestion],
    embedder: &dyn EmbeddingProvider,
) -> Result<Selection, ChallengerError> {
    let no_candidate = || ChallengerError::NoCandidate {
        kind: basic_q.kind,
        relation,
    };
    let query = embedder.embed(&basic_q.text)?;
    match relation {
        MutationRelation::MR1 => {
            let i = argmax_cosine(&query, kb.embeddings(), Execution::default())?.ok_or_else(no_candidate)?;
            let e = &kb.entries()[i];
            Ok(Selection {
                sentence: e.sentence.clone(),
                source_id: e.source_id.clone(),
                candidate_index: i,
            })
        }
        MutationRelation::MR2 => {
            let pool: Vec<&ChallengeQuestion> = peers
                .iter()
                .filter(|p| p.stage == Stage::Basic && *p != basic_q)
                .collect();
            let embeddings = pool
                .iter()
                .map(|p| embedder.embed(&p.text))
                .collect::<Result<Vec<_>, _>>()?;
            let i = argmax_cosine(&query, &embeddings, Execution::Sequential)?.ok_or_else(no_candidate)?;
            Ok(Selection {
                sentence: pool[i].text.clone(),
                source_id: pool[i].source_id(),
                candidate_index: i,
            })
        }
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The basic question with surrounding whitespace and trailing `?` removed.
/// This is the part a mutated question is guaranteed to contain verbatim.
pub fn question_core(text: &str) -> &str {
    text.trim().trim_end_matches('?').trim_end()
}

/// Joins the basic question, clause and redundant sentence into one question.
pub fn mutated_text(basic: &str, clause: &str, redundant: &str) -> String {
    let core = question_core(basic);
    let clause = collapse_ws(clause);
    let redundant = collapse_ws(redundant.trim().trim_end_matches(['?', '.', '!']));
    format!("{core} {clause} {redundant}?")
}

pub fn mutate_question(
    basic_q: &ChallengeQuestion,
    relation: MutationRelation,
    selection: &Selection,
    clause: &str,
) -> Result<ChallengeQuestion, ChallengerError> {
    if basic_q.stage != Stage::Basic {
        return Err(ChallengerError::Invalid("only basic questions can be mutated".into()));
    }
    if question_core(&basic_q.text).is_empty() || clause.trim().is_empty() || selection.sentence.trim().is_empty() {
        return Err(ChallengerError::Invalid("mutation inputs must be non-empty".into()));
    }
    Ok(ChallengeQuestion {
        kind: basic_q.kind,
        stage: Stage::Mutated,
        text: mutated_text(&basic_q.text, clause, &selection.sentence),
        parent_explanation: basic_q.parent_explanation.clone(),
        mutation_info: Some(MutationInfo {
            relation,
            redundant_sentence: selection.sentence.clone(),
            clause: collapse_ws(clause),
            source_id: selection.source_id.clone(),
        }),
    })
}

/// How clauses and relations are assigned to the three kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub clauses: Vec<String>,
    /// Relation per kind, in canonical Why/How/Really order.
    pub relations: [MutationRelation; 3],
}

impl Default for MutationPlan {
    fn default() -> Self {
        Self {
            clauses: DEFAULT_CLAUSES.iter().map(|s| s.to_string()).collect(),
            relations: [MutationRelation::MR1, MutationRelation::MR2, MutationRelation::MR1],
        }
    }
}

impl MutationPlan {
    /// Clauses rotate through the set across consecutive questions of a record.
    pub fn clause_for(&self, explanation_index: usize, kind: ChallengeKind) -> &str {
        let slot = explanation_index * ChallengeKind::ALL.len() + kind.position();
        &self.clauses[slot % self.clauses.len()]
    }

    pub fn relation_for(&self, kind: ChallengeKind) -> MutationRelation {
        self.relations[kind.position()]
    }

    pub fn validate(&self) -> Result<(), ChallengerError> {
        if self.clauses.is_empty() || self.clauses.iter().any(|c| c.trim().is_empty()) {
            return Err(ChallengerError::Invalid("clause set must be non-empty".into()));
        }
        Ok(())
    }
}

/// Mutates all three basic questions of one explanation, or none of them.
pub fn mutate_all(
    basics: &[ChallengeQuestion],
    plan: &MutationPlan,
    kb: &KnowledgeBase,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ChallengeQuestion>, ChallengerError> {
    plan.validate()?;
    basics
        .iter()
        .map(|q| {
            let relation = plan.relation_for(q.kind);
            let sel = select_redundant_sentence(q, relation, kb, basics, embedder)?;
            mutate_question(q, relation, &sel, plan.clause_for(q.parent_explanation.index, q.kind))
        })
        .collect()
}

/// Asks each question in order in the interrogation session, pairing replies positionally.
pub fn run_challenges(
    session: &mut ChatSession,
    questions: &[ChallengeQuestion],
) -> Result<Vec<ChallengeResponse>, ChallengerError> {
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        let text = session.send(&q.text)?;
        out.push(ChallengeResponse {
            kind: q.kind,
            stage: q.stage,
            text,
        });
    }
    Ok(out)
}
