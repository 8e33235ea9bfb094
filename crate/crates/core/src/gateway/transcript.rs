use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, GatewayError};

/// One exchange, serialized as a single JSON Lines row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub session_id: String,
    pub turn: usize,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranscriptFile {
    pub entries: Vec<TranscriptEntry>,
}

impl TranscriptFile {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| GatewayError::TranscriptFormat(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)?;
        Self::from_jsonl(&text).map_err(|e| GatewayError::TranscriptFormat(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), GatewayError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Entries belonging to one session, in turn order.
    pub fn session(&self, session_id: &str) -> Vec<&TranscriptEntry> {
        let mut v: Vec<_> = self.entries.iter().filter(|e| e.session_id == session_id).collect();
        v.sort_by_key(|e| e.turn);
        v
    }
}

/// Loads every `*.jsonl` file in `dir`, in file-name order, as one transcript.
pub fn read_transcript_dir(dir: &Path) -> Result<TranscriptFile, GatewayError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut all = TranscriptFile::default();
    for p in paths {
        all.entries.extend(TranscriptFile::read(&p)?.entries);
    }
    Ok(all)
}

/// Serves recorded responses, checking that each prompt matches the recording.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    sessions: HashMap<String, Vec<(String, String)>>,
}

impl ReplayBackend {
    pub fn from_transcript(t: &TranscriptFile) -> Self {
        let mut sessions: HashMap<String, Vec<(usize, String, String)>> = HashMap::new();
        for e in &t.entries {
            sessions
                .entry(e.session_id.clone())
                .or_default()
                .push((e.turn, e.prompt.clone(), e.response.clone()));
        }
        let sessions = sessions
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|(turn, _, _)| *turn);
                (k, v.into_iter().map(|(_, p, r)| (p, r)).collect())
            })
            .collect();
        Self { sessions }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_transcript(&read_transcript_dir(dir)?))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let index = request.turn();
        let turns = self.sessions.get(request.session_id);
        let Some((expected, response)) = turns.and_then(|t| t.get(index)) else {
            return Err(GatewayError::ReplayExhausted {
                session_id: request.session_id.to_string(),
                index,
            });
        };
        if expected != request.prompt() {
            return Err(GatewayError::ReplayDivergence {
                session_id: request.session_id.to_string(),
                index,
                expected: expected.clone(),
                actual: request.prompt().to_string(),
            });
        }
        Ok(response.clone())
    }
}
