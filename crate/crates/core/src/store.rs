//! On-disk artifact store.
//!
//! Layout under a root directory:
//!
//! ```text
//! records/<record_id>.json        InterrogationRecord
//! transcripts/<record_id>.jsonl   every exchange of the record's sessions
//! labels/<name>.json              LabelFile
//! features/<name>.csv             24 feature columns, label, explanation_ref
//! models/<name>.json              DetectionModel
//! reports/<name>.json             batch and evaluation reports
//! ```
//!
//! JSON files are canonical (sorted keys, two-space indent, LF, trailing
//! newline) and carry a `schema_version`. Record and transcript files are
//! write-once: saving identical bytes again is a no-op, anything else is a
//! conflict.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::challenger::ExplanationRef;
use crate::decider::{extract_features, feature_names, Dataset, FeatureError, Label, LabeledExample, FEATURE_COUNT};
use crate::embedder::EmbeddingProvider;
use crate::enquirer::{BaseQuery, ContextDoc, QuestionTemplate};
use crate::gateway::TranscriptFile;
use crate::par::{self, Execution};
use crate::record::{InterrogationRecord, RecordInvalid, SCHEMA_VERSION};

pub const RECORDS_DIR: &str = "records";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const LABELS_DIR: &str = "labels";
pub const FEATURES_DIR: &str = "features";
pub const MODELS_DIR: &str = "models";
pub const REPORTS_DIR: &str = "reports";

const LABEL_COLUMN: &str = "label";
const REF_COLUMN: &str = "explanation_ref";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: schema_version {found}, expected {expected}")]
    Version { path: PathBuf, found: u64, expected: u32 },
    #[error(transparent)]
    Invalid(#[from] RecordInvalid),
    #[error("record {record_id} references missing transcript {path}")]
    MissingTranscript { record_id: String, path: PathBuf },
    #[error("{0} already exists with different content")]
    Conflict(PathBuf),
    #[error("invalid record id {0:?}: use letters, digits, '.', '_' or '-'")]
    BadId(String),
    #[error("duplicate {what} {id}")]
    Duplicate { what: &'static str, id: String },
    #[error("labels reference missing explanations: {}", .0.join(", "))]
    DanglingLabels(Vec<String>),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error("benchmark entry {index}: {message}")]
    Benchmark { index: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes `value` as canonical JSON.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json::Map is a BTreeMap here, so keys come out sorted.
    let v = serde_json::to_value(value).expect("store types serialize to JSON");
    let mut s = serde_json::to_string_pretty(&v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Record ids become file names and appear in `record#index` references.
pub fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadId(id.to_string()))
    }
}

/// Writes `bytes` unless the file already holds exactly them.
fn write_once(path: &Path, bytes: &[u8]) -> Result<bool, StoreError> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(false),
        Ok(_) => return Err(StoreError::Conflict(path.to_path_buf())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(path)(e)),
    }
    write_atomic(path, bytes)?;
    Ok(true)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a JSON file, checking `schema_version` before full deserialization.
pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let schema = |message: String| StoreError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(StoreError::Version {
                path: path.to_path_buf(),
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => return Err(schema("missing schema_version".into())),
    }
    serde_json::from_value(value).map_err(|e| schema(e.to_string()))
}

/// Adds a top-level `schema_version` to a serializable body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (and creates if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for d in [
            RECORDS_DIR,
            TRANSCRIPTS_DIR,
            LABELS_DIR,
            FEATURES_DIR,
            MODELS_DIR,
            REPORTS_DIR,
        ] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(Self { root })
    }

    /// Opens an existing store without creating anything.
    pub fn existing(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let records = root.join(RECORDS_DIR);
        if !records.is_dir() {
            return Err(StoreError::Io {
                path: records,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a store: no records directory"),
            });
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_path(&self, record_id: &str) -> PathBuf {
        self.root.join(RECORDS_DIR).join(format!("{record_id}.json"))
    }

    /// Transcript location relative to the root, as stored in the record.
    pub fn transcript_rel(record_id: &str) -> String {
        format!("{TRANSCRIPTS_DIR}/{record_id}.jsonl")
    }

    pub fn save_transcript(&self, record_id: &str, transcript: &TranscriptFile) -> Result<PathBuf, StoreError> {
        validate_id(record_id)?;
        let path = self.root.join(Self::transcript_rel(record_id));
        write_once(&path, transcript.to_jsonl().as_bytes())?;
        Ok(path)
    }

    pub fn load_transcript(&self, record: &InterrogationRecord) -> Result<TranscriptFile, StoreError> {
        let path = self.root.join(&record.transcript);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        TranscriptFile::from_jsonl(&text).map_err(|e| StoreError::Schema {
            path,
            message: e.to_string(),
        })
    }

    /// Saves a validated record. Its transcript must already be stored.
    pub fn save_record(&self, record: &InterrogationRecord) -> Result<PathBuf, StoreError> {
        validate_id(&record.record_id)?;
        record.validate()?;
        self.check_transcript(record)?;
        let path = self.record_path(&record.record_id);
        write_once(&path, to_canonical_json(record).as_bytes())?;
        Ok(path)
    }

    fn check_transcript(&self, record: &InterrogationRecord) -> Result<(), StoreError> {
        let t = self.root.join(&record.transcript);
        if !t.is_file() {
            return Err(StoreError::MissingTranscript {
                record_id: record.record_id.clone(),
                path: t,
            });
        }
        Ok(())
    }

    pub fn load_record(&self, record_id: &str) -> Result<InterrogationRecord, StoreError> {
        validate_id(record_id)?;
        let r = self.load_record_file(&self.record_path(record_id))?;
        if r.record_id != record_id {
            return Err(StoreError::Schema {
                path: self.record_path(record_id),
                message: format!("file holds record {}", r.record_id),
            });
        }
        Ok(r)
    }

    /// Loads and validates a record file that lives under this store.
    pub fn load_record_file(&self, path: &Path) -> Result<InterrogationRecord, StoreError> {
        let r: InterrogationRecord = read_versioned(path)?;
        r.validate()?;
        self.check_transcript(&r)?;
        Ok(r)
    }

    /// Record ids present, sorted.
    pub fn record_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(RECORDS_DIR);
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Every record, sorted by id.
    pub fn load_all_records(&self) -> Result<Vec<InterrogationRecord>, StoreError> {
        self.record_ids()?.iter().map(|id| self.load_record(id)).collect()
    }

    /// Overwritable artifact (labels, models, reports) as canonical versioned JSON.
    pub fn write_json<T: Serialize>(&self, dir: &str, name: &str, body: &T) -> Result<PathBuf, StoreError> {
        validate_id(name)?;
        let path = self.root.join(dir).join(format!("{name}.json"));
        write_atomic(&path, to_canonical_json(&Versioned::new(body)).as_bytes())?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub record_id: String,
    pub explanation_index: usize,
    pub label: Label,
    pub annotator_id: String,
}

impl LabelEntry {
    pub fn explanation_ref(&self) -> ExplanationRef {
        ExplanationRef {
            record_id: self.record_id.clone(),
            index: self.explanation_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFile {
    pub schema_version: u32,
    pub entries: Vec<LabelEntry>,
}

impl LabelFile {
    pub fn new(entries: Vec<LabelEntry>) -> Result<Self, StoreError> {
        let f = Self {
            schema_version: SCHEMA_VERSION,
            entries,
        };
        f.validate()?;
        Ok(f)
    }

    /// At most one label per explanation.
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.explanation_ref()) {
                return Err(StoreError::Duplicate {
                    what: "label for",
                    id: e.explanation_ref().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let f: Self = read_versioned(path)?;
        f.validate()?;
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        write_atomic(path, to_canonical_json(self).as_bytes())
    }
}

/// A label matched to an existing explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRef {
    pub explanation_ref: ExplanationRef,
    pub label: Label,
    pub annotator_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    /// Sorted by (record_id, explanation_index).
    pub labeled: Vec<LabeledRef>,
    /// Explanations that exist but carry no label.
    pub unlabeled: Vec<ExplanationRef>,
}

/// Inner join of labels onto the explanations of `records`.
pub fn join_labels(records: &[InterrogationRecord], labels: &LabelFile) -> Result<JoinReport, StoreError> {
    labels.validate()?;
    let mut existing = BTreeSet::new();
    for r in records {
        for i in 0..r.explanations.len() {
            existing.insert(ExplanationRef {
                record_id: r.record_id.clone(),
                index: i,
            });
        }
    }
    let by_ref: BTreeMap<ExplanationRef, &LabelEntry> =
        labels.entries.iter().map(|e| (e.explanation_ref(), e)).collect();
    let dangling: Vec<String> = by_ref
        .keys()
        .filter(|k| !existing.contains(*k))
        .map(ToString::to_string)
        .collect();
    if !dangling.is_empty() {
        return Err(StoreError::DanglingLabels(dangling));
    }
    let mut report = JoinReport::default();
    for r in existing {
        match by_ref.get(&r) {
            Some(e) => report.labeled.push(LabeledRef {
                explanation_ref: r,
                label: e.label,
                annotator_id: e.annotator_id.clone(),
            }),
            None => report.unlabeled.push(r),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub explanation_ref: ExplanationRef,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExport {
    pub examples: Vec<LabeledExample>,
    pub skipped: Vec<SkippedRow>,
    pub unlabeled: Vec<ExplanationRef>,
}

impl FeatureExport {
    pub fn to_csv(&self) -> String {
        features_to_csv(&self.examples)
    }
}

/// Extracts features for every labeled explanation. Rows that cannot be
/// extracted are skipped with a reason; the rest keep join order.
pub fn export_features(
    records: &[InterrogationRecord],
    labels: &LabelFile,
    embedder: &dyn EmbeddingProvider,
    exec: Execution,
) -> Result<FeatureExport, StoreError> {
    let join = join_labels(records, labels)?;
    let by_id: BTreeMap<&str, &InterrogationRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let rows = par::map(exec, &join.labeled, |l| {
        let rec = by_id[l.explanation_ref.record_id.as_str()];
        if !rec.is_complete() {
            return Err("record is quarantined".to_string());
        }
        extract_features(rec, l.explanation_ref.index, embedder)
            .map(|features| LabeledExample {
                features,
                label: l.label,
                explanation_ref: l.explanation_ref.clone(),
            })
            .map_err(|e| match e {
                FeatureError::Incomplete { reason, .. } => reason,
                other => other.to_string(),
            })
    });
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (row, l) in rows.into_iter().zip(&join.labeled) {
        match row {
            Ok(ex) => examples.push(ex),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", l.explanation_ref);
                skipped.push(SkippedRow {
                    explanation_ref: l.explanation_ref.clone(),
                    reason,
                });
            }
        }
    }
    Ok(FeatureExport {
        examples,
        skipped,
        unlabeled: join.unlabeled,
    })
}

/// Features CSV: canonical names, then `label`, then `explanation_ref`.
/// Values use Rust's shortest round-trip float formatting.
pub fn features_to_csv(examples: &[LabeledExample]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header: Vec<&str> = feature_names();
    header.extend([LABEL_COLUMN, REF_COLUMN]);
    w.write_record(&header).expect("in-memory csv write");
    for ex in examples {
        let mut row: Vec<String> = ex.features.values().iter().map(|v| format!("{v:?}")).collect();
        row.push(ex.label.to_string());
        row.push(ex.explanation_ref.to_string());
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is UTF-8")
}

/// Parses a features CSV. Every column other than `label` and
/// `explanation_ref` is a feature; `explanation_ref` is optional.
pub fn parse_features_csv(text: &str, origin: &str) -> Result<Dataset, StoreError> {
    let err = |message: String| StoreError::Csv {
        path: origin.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let label_col = header
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| err(format!("no {LABEL_COLUMN:?} column")))?;
    let ref_col = header.iter().position(|h| h == REF_COLUMN);
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|c| *c != label_col && Some(*c) != ref_col)
        .collect();
    let names: Vec<String> = feature_cols.iter().map(|c| header[*c].to_string()).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut refs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
        let row = feature_cols
            .iter()
            .map(|c| {
                let v: f64 = rec[*c]
                    .parse()
                    .map_err(|_| err(format!("line {line}: {:?} is not a number", &rec[*c])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("line {line}: non-finite value")))
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let label = Label::parse(&rec[label_col])
            .ok_or_else(|| err(format!("line {line}: bad label {:?}", &rec[label_col])))?;
        rows.push(row);
        labels.push(label);
        refs.push(ref_col.map_or_else(|| format!("row#{i}"), |c| rec[c].to_string()));
    }
    let mut d = Dataset::new(names, rows, labels).map_err(|e| err(e.to_string()))?;
    d.refs = refs;
    Ok(d)
}

pub fn read_features_csv(path: &Path) -> Result<Dataset, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_features_csv(&text, &path.display().to_string())
}

/// Imports an externally produced labeled feature set.
pub trait ReplicationAdapter {
    fn name(&self) -> &str;
    fn load(&self) -> Result<Dataset, StoreError>;
}

/// CSV with exactly 24 feature columns in canonical order under any header
/// names, plus a label column. Named columns in `ignore` are dropped.
#[derive(Debug, Clone)]
pub struct CsvReplicationAdapter {
    pub path: PathBuf,
    pub label_column: String,
    pub ignore: Vec<String>,
}

impl CsvReplicationAdapter {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            label_column: LABEL_COLUMN.to_string(),
            ignore: vec![REF_COLUMN.to_string()],
        }
    }
}

impl ReplicationAdapter for CsvReplicationAdapter {
    fn name(&self) -> &str {
        "csv"
    }

    fn load(&self) -> Result<Dataset, StoreError> {
        let text = fs::read_to_string(&self.path).map_err(io_err(&self.path))?;
        let origin = self.path.display().to_string();
        let err = |message: String| StoreError::Csv {
            path: origin.clone(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let label_col = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(&self.label_column))
            .ok_or_else(|| err(format!("no {:?} column", self.label_column)))?;
        let keep: Vec<usize> = (0..header.len())
            .filter(|c| *c != label_col && !self.ignore.iter().any(|i| i.eq_ignore_ascii_case(&header[*c])))
            .collect();
        if keep.len() != FEATURE_COUNT {
            return Err(err(format!("{} feature columns, expected {FEATURE_COUNT}", keep.len())));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
            let row = keep
                .iter()
                .map(|c| {
                    rec[*c]
                        .parse::<f64>()
                        .map_err(|_| err(format!("line {line}: bad number {:?}", &rec[*c])))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
            labels.push(Label::parse(&rec[label_col]).ok_or_else(|| err(format!("line {line}: bad label")))?);
        }
        let names = feature_names().into_iter().map(str::to_string).collect();
        Dataset::new(names, rows, labels).map_err(|e| err(e.to_string()))
    }
}

/// One row of a benchmark input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub source_id: String,
    #[serde(default)]
    pub title: String,
    pub question: String,
    pub answer: String,
    pub factor: QuestionTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_name: Option<String>,
}

impl BenchmarkEntry {
    pub fn base_query(&self) -> BaseQuery {
        BaseQuery {
            factor: self.factor.clone(),
            feature_name: self.feature_name.clone(),
            context: ContextDoc {
                source_id: self.source_id.clone(),
                title: self.title.clone(),
                question: self.question.clone(),
                answer: self.answer.clone(),
            },
        }
    }
}

pub fn parse_benchmark(text: &str) -> Result<Vec<BenchmarkEntry>, StoreError> {
    let entries: Vec<BenchmarkEntry> = serde_json::from_str(text).map_err(|e| StoreError::Benchmark {
        index: 0,
        message: e.to_string(),
    })?;
    let mut seen = BTreeSet::new();
    for (index, e) in entries.iter().enumerate() {
        validate_id(&e.source_id).map_err(|err| StoreError::Benchmark {
            index,
            message: err.to_string(),
        })?;
        e.base_query().validate().map_err(|err| StoreError::Benchmark {
            index,
            message: err.to_string(),
        })?;
        if !seen.insert(e.source_id.as_str()) {
            return Err(StoreError::Duplicate {
                what: "benchmark source_id",
                id: e.source_id.clone(),
            });
        }
    }
    Ok(entries)
}

pub fn read_benchmark(path: &Path) -> Result<Vec<BenchmarkEntry>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_benchmark(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decider::FeatureVector;
    use crate::enquirer::{Explanation, Factor};
    use crate::record::{ExplanationRecord, RecordStatus};

    fn record(id: &str, n: usize) -> InterrogationRecord {
        InterrogationRecord {
            schema_version: SCHEMA_VERSION,
            record_id: id.into(),
            base_query: BaseQuery {
                factor: QuestionTemplate::Factor(Factor::Stability),
                feature_name: None,
                context: ContextDoc {
                    source_id: id.into(),
                    title: String::new(),
                    question: "q".into(),
                    answer: "a".into(),
                },
            },
            backend_id: "mock".into(),
            model: "m".into(),
            started_at: 0,
            finished_at: 0,
            status: RecordStatus::Quarantined {
                stage: crate::record::PipelineStage::Generation,
                explanation_index: Some(0),
                error: "x".into(),
            },
            base_response: Some("r".into()),
            enquiry_response: None,
            explanations: (0..n)
                .map(|i| {
                    ExplanationRecord::new(Explanation {
                        index: i,
                        title: "t".into(),
                        body: "b".into(),
                        parent_record: id.into(),
                    })
                })
                .collect(),
            sessions: vec![],
            transcript: Store::transcript_rel(id),
        }
    }

    fn label(id: &str, i: usize, l: Label) -> LabelEntry {
        LabelEntry {
            record_id: id.into(),
            explanation_index: i,
            label: l,
            annotator_id: "a1".into(),
        }
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v = serde_json::json!({"b": 1, "a": {"d": 2, "c": 3}});
        assert_eq!(
            to_canonical_json(&v),
            "{\n  \"a\": {\n    \"c\": 3,\n    \"d\": 2\n  },\n  \"b\": 1\n}\n"
        );
    }

    #[test]
    fn ids() {
        assert!(validate_id("so-123_a.b").is_ok());
        for bad in ["", "../x", "a/b", "a#1", ".hidden", "a b"] {
            assert!(validate_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn record_round_trip_and_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let r = record("r1", 2);
        assert!(matches!(
            store.save_record(&r),
            Err(StoreError::MissingTranscript { .. })
        ));
        store.save_transcript("r1", &TranscriptFile::default()).unwrap();
        let p = store.save_record(&r).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = store.load_record("r1").unwrap();
        assert_eq!(back, r);
        store.save_record(&back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
        let mut changed = r.clone();
        changed.model = "other".into();
        assert!(matches!(store.save_record(&changed), Err(StoreError::Conflict(_))));
        assert_eq!(store.record_ids().unwrap(), vec!["r1"]);
    }

    #[test]
    fn corrupt_and_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        fs::write(store.record_path("bad"), "{not json").unwrap();
        let e = store.load_record("bad").unwrap_err();
        assert!(matches!(e, StoreError::Schema { .. }));
        assert!(e.to_string().contains("bad.json"));
        fs::write(store.record_path("old"), "{\"schema_version\": 0}").unwrap();
        assert!(matches!(
            store.load_record("old"),
            Err(StoreError::Version { found: 0, .. })
        ));
    }

    #[test]
    fn join_five_of_six() {
        let recs = [record("a", 3), record("b", 3)];
        let labels = LabelFile::new(vec![
            label("a", 0, Label::Correct),
            label("a", 1, Label::Incorrect),
            label("a", 2, Label::Correct),
            label("b", 0, Label::Correct),
            label("b", 2, Label::Incorrect),
        ])
        .unwrap();
        let j = join_labels(&recs, &labels).unwrap();
        assert_eq!(j.labeled.len(), 5);
        assert_eq!(
            j.unlabeled,
            vec![ExplanationRef {
                record_id: "b".into(),
                index: 1
            }]
        );
        let empty = join_labels(&recs, &LabelFile::new(vec![]).unwrap()).unwrap();
        assert!(empty.labeled.is_empty());
        assert_eq!(empty.unlabeled.len(), 6);
    }

    #[test]
    fn dangling_and_duplicate_labels() {
        let recs = [record("a", 1)];
        let l = LabelFile::new(vec![label("a", 3, Label::Correct), label("zz", 0, Label::Correct)]).unwrap();
        match join_labels(&recs, &l) {
            Err(StoreError::DanglingLabels(v)) => assert_eq!(v, vec!["a#3", "zz#0"]),
            other => panic!("{other:?}"),
        }
        assert!(LabelFile::new(vec![label("a", 0, Label::Correct), label("a", 0, Label::Incorrect)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ex = LabeledExample {
            features: FeatureVector::new(std::array::from_fn(|i| (i as f64) / 24.0 - 0.5)).unwrap(),
            label: Label::Incorrect,
            explanation_ref: ExplanationRef {
                record_id: "a".into(),
                index: 1,
            },
        };
        let text = features_to_csv(std::slice::from_ref(&ex));
        assert!(text.starts_with("er_basic_why,"));
        let d = parse_features_csv(&text, "mem").unwrap();
        assert_eq!(d.width(), 24);
        assert_eq!(d.rows[0], ex.features.values().to_vec());
        assert_eq!(d.labels, vec![Label::Incorrect]);
        assert_eq!(d.refs, vec!["a#1"]);
    }

    #[test]
    fn benchmark_duplicates_rejected() {
        let one = r#"{"source_id":"s1","title":"t","question":"q","answer":"a","factor":"stability"}"#;
        assert_eq!(parse_benchmark(&format!("[{one}]")).unwrap().len(), 1);
        assert!(matches!(
            parse_benchmark(&format!("[{one},{one}]")),
            Err(StoreError::Duplicate { .. })
        ));
        let feature = r#"[{"source_id":"s2","question":"q","answer":"a","factor":"feature"}]"#;
        assert!(matches!(
            parse_benchmark(feature),
            Err(StoreError::Benchmark { index: 0, .. })
        ));
    }
}
