//! Append-only tournament event log and replay.
//!
//! One canonical JSON record per line. Each line carries a `hash` field:
//! sha256 over the previous line's hash and this line's canonical body
//! (the record without `hash`). A changed byte therefore breaks either
//! the JSON, the canonical form, or the hash of the very line it sits on,
//! so corruption is reported at the offending line rather than downstream.
//!
//! Layout: one `header`, one `session` per scheduled session, then
//! `event` records in append order, closed by a `scored` checkpoint.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_json};
use crate::domain::{Kind, Participant, ParticipantId, TournamentConfig};
use crate::scheduler::{SessionId, SessionPlan};
use crate::scoring::{evaluate_meta, JudgmentMatrix, PassReport, ScoringError};
use crate::session::{SessionError, SessionEvent, SessionRoster, SessionState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Header {
        config: TournamentConfig,
        master_seed: u64,
        roster: Vec<Participant>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replication: Option<u64>,
    },
    Session {
        plan: SessionPlan,
        roster: SessionRoster,
    },
    Event {
        session_id: SessionId,
        event: SessionEvent,
    },
    /// Scoring checkpoint: digest of the canonical meta-rule reports.
    Scored {
        reports_digest: String,
    },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("incomplete log after line {last_line}: {reason}")]
    IncompleteLog {
        last_line: usize,
        reason: String,
        open_sessions: Vec<SessionId>,
    },
    #[error("line {line}: session {session_id} rejected event: {error}")]
    InvalidEvent { line: usize, session_id: SessionId, error: SessionError },
    #[error("replayed reports diverge from the checkpoint at line {line}")]
    Diverged { line: usize, recorded: String, recomputed: String },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LogError {
    /// Line number the error points at, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            LogError::CorruptLog { line, .. } | LogError::InvalidEvent { line, .. } | LogError::Diverged { line, .. } => {
                Some(*line)
            }
            LogError::IncompleteLog { last_line, .. } => Some(*last_line),
            _ => None,
        }
    }
}

fn chain_hash(prev: &str, body: &str) -> String {
    let mut bytes = Vec::with_capacity(prev.len() + body.len());
    bytes.extend_from_slice(prev.as_bytes());
    bytes.extend_from_slice(body.as_bytes());
    sha256_hex(&bytes)
}

/// Single appender. Every record is flushed as one complete line.
pub struct LogWriter<W: Write> {
    out: W,
    prev: String,
    lines: usize,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        LogWriter { out, prev: String::new(), lines: 0 }
    }

    pub fn append(&mut self, record: &Record) -> io::Result<()> {
        let mut value = serde_json::to_value(record).map_err(io::Error::other)?;
        let body = to_canonical_json(&value).map_err(io::Error::other)?;
        let hash = chain_hash(&self.prev, &body);
        value
            .as_object_mut()
            .expect("records serialize as objects")
            .insert("hash".into(), Value::String(hash.clone()));
        let mut line = to_canonical_json(&value).map_err(io::Error::other)?;
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        self.out.flush()?;
        self.prev = hash;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Digest of a report list as stored in the `scored` checkpoint.
pub fn reports_digest(reports: &[PassReport]) -> String {
    let mut sorted = reports.to_vec();
    sorted.sort_by(|a, b| a.machine_id.cmp(&b.machine_id));
    sha256_hex(to_canonical_json(&sorted).expect("reports serialize").as_bytes())
}

/// Hash identifying a log: sha256 of its exact bytes.
pub fn log_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

/// Parse and verify every line. Returns the records with their 1-based
/// line numbers. A final line without its newline is a truncated write.
pub fn read_records(bytes: &[u8]) -> Result<Vec<(usize, Record)>, LogError> {
    let mut records = Vec::new();
    let mut prev = String::new();
    let mut rest = bytes;
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let corrupt = |reason: String| LogError::CorruptLog { line: line_no, reason };
        let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(end) => {
                let line = &rest[..end];
                rest = &rest[end + 1..];
                (line, true)
            }
            None => (std::mem::take(&mut rest), false),
        };
        let text = std::str::from_utf8(line).map_err(|e| corrupt(e.to_string()))?;
        // An unterminated last line cut off mid-record is an interrupted
        // write; any other damage there is corruption like anywhere else.
        let truncated = || LogError::IncompleteLog {
            last_line: line_no - 1,
            reason: format!("line {line_no} is truncated"),
            open_sessions: Vec::new(),
        };
        let mut value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) if !terminated && e.is_eof() => return Err(truncated()),
            Err(e) => return Err(corrupt(e.to_string())),
        };
        if to_canonical_json(&value).map_err(|e| corrupt(e.to_string()))? != text {
            return Err(corrupt("not in canonical form".into()));
        }
        let Some(Value::String(hash)) = value.as_object_mut().and_then(|o| o.remove("hash")) else {
            return Err(corrupt("missing hash".into()));
        };
        let body = to_canonical_json(&value).map_err(|e| corrupt(e.to_string()))?;
        if chain_hash(&prev, &body) != hash {
            return Err(corrupt("hash chain mismatch".into()));
        }
        let record: Record = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        if !terminated {
            return Err(truncated());
        }
        prev = hash;
        records.push((line_no, record));
    }
    Ok(records)
}

/// Everything reconstructed from a log.
#[derive(Debug, Clone)]
pub struct Replay {
    pub config: TournamentConfig,
    pub master_seed: u64,
    pub roster: Vec<Participant>,
    pub replication: Option<u64>,
    pub sessions: BTreeMap<SessionId, SessionState>,
    pub matrix: JudgmentMatrix,
    pub reports: Vec<PassReport>,
    pub log_hash: String,
}

impl Replay {
    pub fn kinds(&self) -> BTreeMap<ParticipantId, Kind> {
        kinds_of(&self.roster)
    }
}

fn kinds_of(roster: &[Participant]) -> BTreeMap<ParticipantId, Kind> {
    roster.iter().map(|p| (p.id.clone(), p.kind)).collect()
}

/// Fold every session from the log and rescore under the header config.
///
/// The recomputed reports must match the `scored` checkpoint. A log that
/// stops early reports the last good line and the sessions left open.
pub fn replay_log(bytes: &[u8]) -> Result<Replay, LogError> {
    let records = read_records(bytes)?;
    let mut iter = records.into_iter();
    let (config, master_seed, roster, replication) = match iter.next() {
        Some((_, Record::Header { config, master_seed, roster, replication })) => {
            (config, master_seed, roster, replication)
        }
        Some((line, _)) => return Err(LogError::CorruptLog { line, reason: "first record is not a header".into() }),
        None => {
            return Err(LogError::IncompleteLog {
                last_line: 0,
                reason: "empty log".into(),
                open_sessions: Vec::new(),
            })
        }
    };
    let mut sessions: BTreeMap<SessionId, SessionState> = BTreeMap::new();
    let mut last_line = 1;
    let mut checkpoint = None;
    for (line, record) in iter {
        last_line = line;
        if checkpoint.is_some() {
            return Err(LogError::CorruptLog { line, reason: "record after the scoring checkpoint".into() });
        }
        match record {
            Record::Header { .. } => {
                return Err(LogError::CorruptLog { line, reason: "duplicate header".into() });
            }
            Record::Session { plan, roster } => {
                let id = plan.session_id.clone();
                if sessions.insert(id.clone(), SessionState::new(plan, roster)).is_some() {
                    return Err(LogError::CorruptLog { line, reason: format!("session {id} declared twice") });
                }
            }
            Record::Event { session_id, event } => {
                let state = sessions.get_mut(&session_id).ok_or_else(|| LogError::CorruptLog {
                    line,
                    reason: format!("event for undeclared session {session_id}"),
                })?;
                state
                    .apply(event, &config)
                    .map_err(|error| LogError::InvalidEvent { line, session_id: session_id.clone(), error })?;
            }
            Record::Scored { reports_digest } => checkpoint = Some((line, reports_digest)),
        }
    }
    let open: Vec<SessionId> = sessions
        .values()
        .filter(|s| !s.transcript.is_empty() && !s.phase.is_terminal())
        .map(|s| s.plan.session_id.clone())
        .collect();
    let Some((line, recorded)) = checkpoint else {
        let reason = if open.is_empty() {
            "no scoring checkpoint".to_string()
        } else {
            format!("{} session(s) still open and no scoring checkpoint", open.len())
        };
        return Err(LogError::IncompleteLog { last_line, reason, open_sessions: open });
    };
    if !open.is_empty() {
        return Err(LogError::IncompleteLog {
            last_line: line,
            reason: "scoring checkpoint precedes open sessions".into(),
            open_sessions: open,
        });
    }
    let finished = sessions.values().filter(|s| s.phase.is_terminal());
    let matrix = JudgmentMatrix::from_sessions(config.format, kinds_of(&roster), finished)?;
    let reports = evaluate_meta(&matrix, &config)?;
    let recomputed = reports_digest(&reports);
    if recomputed != recorded {
        return Err(LogError::Diverged { line, recorded, recomputed });
    }
    Ok(Replay { config, master_seed, roster, replication, sessions, matrix, reports, log_hash: log_hash(bytes) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Format;

    fn header() -> Record {
        Record::Header {
            config: TournamentConfig::strict(Format::OneToOne),
            master_seed: 1,
            roster: vec![Participant::human("h"), Participant::machine("m")],
            replication: None,
        }
    }

    #[test]
    fn lines_are_canonical_and_chained() {
        let mut w = LogWriter::new(Vec::new());
        w.append(&header()).unwrap();
        w.append(&Record::Scored { reports_digest: "x".into() }).unwrap();
        let bytes = w.into_inner();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("{\"hash\":\""));
        let records = read_records(&bytes).unwrap();
        assert_eq!(records[1], (2, Record::Scored { reports_digest: "x".into() }));
    }

    #[test]
    fn reordered_lines_break_the_chain() {
        let mut w = LogWriter::new(Vec::new());
        w.append(&header()).unwrap();
        w.append(&Record::Scored { reports_digest: "a".into() }).unwrap();
        w.append(&Record::Scored { reports_digest: "b".into() }).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let l: Vec<&str> = text.lines().collect();
        let swapped = format!("{}\n{}\n{}\n", l[0], l[2], l[1]);
        let err = read_records(swapped.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn missing_newline_is_incomplete() {
        let mut w = LogWriter::new(Vec::new());
        w.append(&header()).unwrap();
        let mut bytes = w.into_inner();
        bytes.pop();
        assert!(matches!(read_records(&bytes), Err(LogError::IncompleteLog { last_line: 0, .. })));
    }

    #[test]
    fn non_canonical_whitespace_is_corruption() {
        let mut w = LogWriter::new(Vec::new());
        w.append(&header()).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap().replacen(':', ": ", 1);
        let err = read_records(text.as_bytes()).unwrap_err();
        assert!(matches!(err, LogError::CorruptLog { line: 1, .. }), "{err}");
    }
}
