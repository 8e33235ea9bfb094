//! Base question prompts and explanation splitting.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatSession, GatewayError};

pub const BASE_PROMPT_PREFIX: &str = "Respond in less than 200 words";
pub const BASE_PROMPT_CONTEXT_LEAD: &str = "strictly based on the following conversation (question, answer):";

pub const ENQUIRY_JSON_PROMPT: &str = "Provide explanation for the answer. Each reason separately with title in 4 words and the explanation in 50 words. Respond strictly in JSON [{\"title\":x, \"explanation\":y}] strictly based on the previous conversation (question, answer).";

pub const ENQUIRY_JUSTIFY_PROMPT: &str =
    "Justify your answer. If the answer has multiple pieces of information, provide separate reasoning for each of them.";

/// Placeholder in templates that is replaced by the feature name.
pub const FEATURE_SLOT: &str = "[x]";

#[derive(Debug, Error)]
pub enum EnquirerError {
    #[error("invalid base query: {0}")]
    InvalidQuery(String),
    #[error("base question must be asked in a fresh session; {0} already holds {1} messages")]
    SessionNotFresh(String, usize),
    #[error("could not parse explanations ({reason}); raw reply: {raw:?}")]
    ExplanationParse { reason: String, raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Library evaluation aspect with a fixed base-question template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    ActiveMaintenance,
    Documentation,
    EaseOfUse,
    Feature,
    Performance,
    Security,
    Stability,
}

impl Factor {
    pub const ALL: [Factor; 7] = [
        Factor::ActiveMaintenance,
        Factor::Documentation,
        Factor::EaseOfUse,
        Factor::Feature,
        Factor::Performance,
        Factor::Security,
        Factor::Stability,
    ];

    pub fn template(self) -> &'static str {
        match self {
            Factor::ActiveMaintenance => "How actively the library is maintained",
            Factor::Documentation => "How is the documentation of the library",
            Factor::EaseOfUse => "How easy it is to use the library",
            Factor::Feature => "How well does this library support [x] feature",
            Factor::Performance => "How is the performance of the library",
            Factor::Security => "How is the security of the library",
            Factor::Stability => "How stable or well tested is the library",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::ActiveMaintenance => "ActiveMaintenance",
            Factor::Documentation => "Documentation",
            Factor::EaseOfUse => "EaseOfUse",
            Factor::Feature => "Feature",
            Factor::Performance => "Performance",
            Factor::Security => "Security",
            Factor::Stability => "Stability",
        }
    }

    /// Accepts names case-insensitively, ignoring spaces and punctuation
    /// ("Ease of use", "ease_of_use", "Active Maint.").
    pub fn parse(s: &str) -> Option<Factor> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Some(match key.as_str() {
            "activemaintenance" | "activemaint" | "maintenance" => Factor::ActiveMaintenance,
            "documentation" | "docs" => Factor::Documentation,
            "easeofuse" | "usability" => Factor::EaseOfUse,
            "feature" => Factor::Feature,
            "performance" => Factor::Performance,
            "security" => Factor::Security,
            "stability" => Factor::Stability,
            _ => return None,
        })
    }
}

/// Either one of the fixed factor templates or free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuestionTemplate {
    Factor(Factor),
    Custom(String),
}

impl QuestionTemplate {
    pub fn text(&self) -> &str {
        match self {
            QuestionTemplate::Factor(f) => f.template(),
            QuestionTemplate::Custom(t) => t,
        }
    }
}

impl fmt::Display for QuestionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionTemplate::Factor(x) => f.write_str(x.name()),
            QuestionTemplate::Custom(t) => f.write_str(t),
        }
    }
}

impl From<&str> for QuestionTemplate {
    fn from(s: &str) -> Self {
        Factor::parse(s).map_or_else(|| QuestionTemplate::Custom(s.to_string()), QuestionTemplate::Factor)
    }
}

impl Serialize for QuestionTemplate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for QuestionTemplate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(QuestionTemplate::from(s.as_str()))
    }
}

/// The Stack Overflow post a base question is grounded in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub source_id: String,
    #[serde(default)]
    pub title: String,
    pub question: String,
    pub answer: String,
}

impl ContextDoc {
    /// `Title:` (when present), `Question:` and `Answer:` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.title.trim().is_empty() {
            out.push_str("Title: ");
            out.push_str(self.title.trim());
            out.push('\n');
        }
        out.push_str("Question: ");
        out.push_str(self.question.trim());
        out.push_str("\nAnswer: ");
        out.push_str(self.answer.trim());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseQuery {
    pub factor: QuestionTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_name: Option<String>,
    pub context: ContextDoc,
}

impl BaseQuery {
    pub fn validate(&self) -> Result<(), EnquirerError> {
        if self.factor.text().trim().is_empty() {
            return Err(EnquirerError::InvalidQuery("question template is empty".into()));
        }
        let needs_feature =
            self.factor == QuestionTemplate::Factor(Factor::Feature) || self.factor.text().contains(FEATURE_SLOT);
        let has_feature = self.feature_name.as_deref().is_some_and(|f| !f.trim().is_empty());
        if needs_feature && !has_feature {
            return Err(EnquirerError::InvalidQuery(format!(
                "template {:?} requires a feature_name",
                self.factor.text()
            )));
        }
        if self.context.question.trim().is_empty() || self.context.answer.trim().is_empty() {
            return Err(EnquirerError::InvalidQuery(format!(
                "context {} needs a non-empty question and answer",
                self.context.source_id
            )));
        }
        Ok(())
    }

    /// The base question itself, with the feature slot filled.
    pub fn question_text(&self) -> Result<String, EnquirerError> {
        self.validate()?;
        let t = self.factor.text().trim();
        Ok(match &self.feature_name {
            Some(f) if t.contains(FEATURE_SLOT) => t.replace(FEATURE_SLOT, f.trim()),
            _ => t.to_string(),
        })
    }
}

/// Which enquiry wording to use after the base exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnquiryStyle {
    /// Structured JSON request; the only style [`parse_explanations`] understands.
    #[default]
    Json,
    /// Free-form justification request.
    Justify,
}

pub fn build_base_prompt(q: &BaseQuery) -> Result<String, EnquirerError> {
    Ok(format!(
        "{BASE_PROMPT_PREFIX} {} {BASE_PROMPT_CONTEXT_LEAD}\n\n{}",
        q.question_text()?,
        q.context.render()
    ))
}

pub fn build_enquiry_prompt(q: &BaseQuery, base_response: &str, style: EnquiryStyle) -> Result<String, EnquirerError> {
    let lead = match style {
        EnquiryStyle::Json => ENQUIRY_JSON_PROMPT,
        EnquiryStyle::Justify => ENQUIRY_JUSTIFY_PROMPT,
    };
    Ok(format!(
        "{lead}\n\n{}\n\n{}\n{}",
        q.context.render(),
        q.question_text()?,
        base_response.trim()
    ))
}

/// Asks the base question as the first turn of `session`.
pub fn ask_base(session: &mut ChatSession, q: &BaseQuery) -> Result<String, EnquirerError> {
    if !session.messages().is_empty() {
        return Err(EnquirerError::SessionNotFresh(
            session.id().to_string(),
            session.messages().len(),
        ));
    }
    let prompt = build_base_prompt(q)?;
    Ok(session.send(&prompt)?)
}

/// Asks for per-reason explanations of the base response in the same session.
pub fn ask_enquiry(
    session: &mut ChatSession,
    q: &BaseQuery,
    base_response: &str,
    style: EnquiryStyle,
) -> Result<String, EnquirerError> {
    if session.exchanges().is_empty() {
        return Err(EnquirerError::InvalidQuery(
            "enquiry requires a prior base exchange".into(),
        ));
    }
    let prompt = build_enquiry_prompt(q, base_response, style)?;
    Ok(session.send(&prompt)?)
}

/// One judgeable piece of the base response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub index: usize,
    pub title: String,
    pub body: String,
    pub parent_record: String,
}

/// Serializes explanations in the shape the enquiry prompt asks for.
pub fn serialize_explanations(list: &[Explanation]) -> String {
    let items: Vec<Value> = list
        .iter()
        .map(|e| serde_json::json!({"title": e.title, "explanation": e.body}))
        .collect();
    serde_json::to_string(&items).expect("json values serialize")
}

/// Parses a JSON explanation list, tolerating code fences and surrounding prose.
///
/// Recovery order: the raw text as-is, then with fences and outer prose
/// stripped, then the first balanced `[...]` block.
pub fn parse_explanations(raw: &str, record_id: &str) -> Result<Vec<Explanation>, EnquirerError> {
    let fail = |reason: String| EnquirerError::ExplanationParse {
        reason,
        raw: raw.to_string(),
    };
    if raw.trim().is_empty() {
        return Err(fail("empty reply".into()));
    }
    let candidates = [
        Some(raw.trim().to_string()),
        strip_decoration(raw),
        first_balanced_array(raw),
    ];
    let mut last_reason = String::from("no JSON found");
    for text in candidates.into_iter().flatten() {
        match serde_json::from_str::<Value>(&text) {
            Ok(v) => match explanations_from_value(&v, record_id) {
                Ok(list) => return Ok(list),
                Err(reason) => last_reason = reason,
            },
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(fail(last_reason))
}

fn strip_decoration(raw: &str) -> Option<String> {
    let unfenced: String = raw
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    let start = unfenced.find(['[', '{'])?;
    let end = unfenced.rfind([']', '}'])?;
    (end > start).then(|| unfenced[start..=end].to_string())
}

fn first_balanced_array(raw: &str) -> Option<String> {
    let start = raw.find('[')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(raw[start..start + i + 1].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

fn explanations_from_value(v: &Value, record_id: &str) -> Result<Vec<Explanation>, String> {
    let items: Vec<&Value> = match v {
        Value::Array(a) => a.iter().collect(),
        Value::Object(o) if o.contains_key("explanation") => vec![v],
        Value::Object(o) => o
            .values()
            .find_map(Value::as_array)
            .ok_or("object without an explanation list")?
            .iter()
            .collect(),
        _ => return Err("expected a JSON array".into()),
    };
    if items.is_empty() {
        return Err("explanation list is empty".into());
    }
    items
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let field = |name: &str| {
                item.get(name)
                    .and_then(Value::as_str)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| format!("item {index} lacks a non-empty {name:?}"))
            };
            Ok(Explanation {
                index,
                title: field("title")?,
                body: field("explanation")?,
                parent_record: record_id.to_string(),
            })
        })
        .collect()
}
