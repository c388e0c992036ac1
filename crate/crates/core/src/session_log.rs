//! Append-only JSONL session log and its replay into task records.
//!
//! One event per line, tagged by `"event"`. Every engine transition writes
//! exactly one line: `session_start`, `attempt` (a description was
//! submitted), `judgment` (a non-final verdict), or `session_end` (the final
//! verdict, or an abandoned/errored session). Replaying a log rebuilds the
//! same [`TaskRecord`]s the live run produced.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TextileId;
use crate::game::{GameSession, Judgment, SessionState};
use crate::metrics::{AttemptRecord, Outcome, TaskRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndOutcome {
    Won,
    Lost,
    /// Still in flight at shutdown; excluded from metrics.
    Abandoned,
    /// Aborted by a failure (for example the embedding backend).
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    SessionStart {
        session_id: String,
        ts: String,
        target_id: TextileId,
        reference_id: TextileId,
        #[serde(default)]
        synthetic: bool,
    },
    Attempt {
        session_id: String,
        ts: String,
        attempt_index: u32,
        new_description: String,
        accumulated_query: String,
        anchor_id: TextileId,
        predicted_id: TextileId,
        #[serde(with = "id_keyed")]
        scores: BTreeMap<TextileId, f64>,
    },
    Judgment {
        session_id: String,
        ts: String,
        attempt_index: u32,
        correct: bool,
        validity: Option<u8>,
        similarity: Option<u8>,
        shown_reference_id: TextileId,
    },
    SessionEnd {
        session_id: String,
        ts: String,
        outcome: EndOutcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attempt_index: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        correct: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        validity: Option<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        similarity: Option<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Id-keyed maps inside internally tagged events go through buffered
/// content, where integer keys arrive as strings.
mod id_keyed {
    use std::collections::BTreeMap;

    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    use crate::catalog::TextileId;

    pub fn serialize<S: Serializer>(map: &BTreeMap<TextileId, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<TextileId, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|id| (id, v)).map_err(D::Error::custom))
            .collect()
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl LogEvent {
    pub fn session_id(&self) -> &str {
        match self {
            LogEvent::SessionStart { session_id, .. }
            | LogEvent::Attempt { session_id, .. }
            | LogEvent::Judgment { session_id, .. }
            | LogEvent::SessionEnd { session_id, .. } => session_id,
        }
    }

    pub fn started(session: &GameSession, synthetic: bool) -> Self {
        LogEvent::SessionStart {
            session_id: session.session_id.clone(),
            ts: now(),
            target_id: session.assignment.target_id,
            reference_id: session.assignment.reference_id,
            synthetic,
        }
    }

    /// Event for the most recent submitted description.
    pub fn attempted(session: &GameSession) -> Self {
        let a = session.attempts.last().expect("session has an attempt");
        LogEvent::Attempt {
            session_id: session.session_id.clone(),
            ts: now(),
            attempt_index: a.index,
            new_description: a.new_description.clone(),
            accumulated_query: a.accumulated_query.clone(),
            anchor_id: a.anchor_id,
            predicted_id: a.predicted_id,
            scores: a.score_snapshot.clone(),
        }
    }

    /// Event for the most recent verdict: `judgment` while the game goes
    /// on, `session_end` once it is over.
    pub fn judged(session: &GameSession) -> Self {
        let a = session.attempts.last().expect("session has an attempt");
        let correct = a.judgment == Judgment::Correct;
        match session.state {
            SessionState::Won | SessionState::Lost => LogEvent::SessionEnd {
                session_id: session.session_id.clone(),
                ts: now(),
                outcome: if session.state == SessionState::Won { EndOutcome::Won } else { EndOutcome::Lost },
                attempt_index: Some(a.index),
                correct: Some(correct),
                validity: a.validity,
                similarity: a.similarity,
                error: None,
            },
            _ => LogEvent::Judgment {
                session_id: session.session_id.clone(),
                ts: now(),
                attempt_index: a.index,
                correct,
                validity: a.validity,
                similarity: a.similarity,
                shown_reference_id: session.shown_reference_id,
            },
        }
    }

    pub fn ended(session_id: &str, outcome: EndOutcome, error: Option<String>) -> Self {
        LogEvent::SessionEnd {
            session_id: session_id.to_owned(),
            ts: now(),
            outcome,
            attempt_index: None,
            correct: None,
            validity: None,
            similarity: None,
            error,
        }
    }
}

/// Serialized appender: one JSON line per event, flushed immediately.
pub struct SessionLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl SessionLog {
    pub fn new(sink: impl Write + Send + 'static) -> Self {
        Self { sink: Mutex::new(Box::new(sink)) }
    }

    /// Opens `path` for appending, creating it if missing.
    pub fn open(path: &Path) -> io::Result<Self> {
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(file))
    }

    /// A log that discards everything.
    pub fn discard() -> Self {
        Self::new(io::sink())
    }

    pub fn append(&self, event: &LogEvent) -> io::Result<()> {
        let mut line = serde_json::to_string(event).map_err(io::Error::other)?;
        line.push('\n');
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        sink.write_all(line.as_bytes())?;
        sink.flush()
    }

    pub fn flush(&self) -> io::Result<()> {
        self.sink.lock().unwrap_or_else(|e| e.into_inner()).flush()
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// Everything recoverable from a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    /// Finished tasks in completion order.
    pub records: Vec<TaskRecord>,
    /// Sessions explicitly abandoned or never ended.
    pub abandoned: Vec<String>,
    /// Sessions that ended in an error, with the message.
    pub errored: Vec<(String, String)>,
    /// Whether any session came from a scripted participant.
    pub synthetic: bool,
}

struct Partial {
    target_id: TextileId,
    reference_id: TextileId,
    attempts: Vec<AttemptRecord>,
    pending: bool,
}

fn apply_verdict(
    p: &mut Partial,
    index: u32,
    correct: bool,
    validity: Option<u8>,
    similarity: Option<u8>,
) -> Result<(), String> {
    if !p.pending || index as usize != p.attempts.len() {
        return Err(format!("verdict for attempt {index} without a pending guess"));
    }
    let a = p.attempts.last_mut().expect("pending attempt");
    a.correct = correct;
    a.validity = validity;
    a.similarity = similarity;
    p.pending = false;
    Ok(())
}

/// Rebuilds task records from a JSONL log.
pub fn replay(source: impl BufRead) -> Result<Replay, ReplayError> {
    let mut open: HashMap<String, Partial> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut out = Replay::default();

    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| ReplayError::Invalid { line: lineno, message };
        let event: LogEvent = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        let sid = event.session_id().to_owned();
        match event {
            LogEvent::SessionStart { target_id, reference_id, synthetic, .. } => {
                if open.contains_key(&sid) {
                    return Err(invalid(format!("session {sid} started twice")));
                }
                out.synthetic |= synthetic;
                open.insert(sid.clone(), Partial { target_id, reference_id, attempts: Vec::new(), pending: false });
                order.push(sid);
            }
            LogEvent::Attempt { attempt_index, predicted_id, .. } => {
                let p = open.get_mut(&sid).ok_or_else(|| invalid(format!("attempt for unknown session {sid}")))?;
                if p.pending || attempt_index as usize != p.attempts.len() + 1 {
                    return Err(invalid(format!("unexpected attempt {attempt_index} in {sid}")));
                }
                p.attempts.push(AttemptRecord { predicted_id, correct: false, validity: None, similarity: None });
                p.pending = true;
            }
            LogEvent::Judgment { attempt_index, correct, validity, similarity, .. } => {
                let p = open.get_mut(&sid).ok_or_else(|| invalid(format!("judgment for unknown session {sid}")))?;
                apply_verdict(p, attempt_index, correct, validity, similarity).map_err(invalid)?;
            }
            LogEvent::SessionEnd { outcome, attempt_index, correct, validity, similarity, error, .. } => {
                let mut p = open.remove(&sid).ok_or_else(|| invalid(format!("end of unknown session {sid}")))?;
                order.retain(|s| *s != sid);
                let outcome = match outcome {
                    EndOutcome::Abandoned => {
                        out.abandoned.push(sid);
                        continue;
                    }
                    EndOutcome::Error => {
                        out.errored.push((sid, error.unwrap_or_default()));
                        continue;
                    }
                    EndOutcome::Won => Outcome::Won,
                    EndOutcome::Lost => Outcome::Lost,
                };
                if let (Some(index), Some(correct)) = (attempt_index, correct) {
                    apply_verdict(&mut p, index, correct, validity, similarity).map_err(invalid)?;
                }
                let record = TaskRecord {
                    session_id: sid,
                    target_id: p.target_id,
                    initial_reference_id: p.reference_id,
                    outcome,
                    attempts: p.attempts,
                };
                record.validate(None).map_err(|e| invalid(e.to_string()))?;
                out.records.push(record);
            }
        }
    }
    out.abandoned.extend(order);
    Ok(out)
}

pub fn replay_file(path: &Path) -> Result<Replay, ReplayError> {
    replay(io::BufReader::new(File::open(path)?))
}
