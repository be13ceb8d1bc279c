//! Newline-delimited JSON frames spoken by bots and the browser client.
//!
//! Every frame is one canonical JSON object on one line:
//!
//! ```text
//! {"payload":{"text":"hi"},"seq":4,"session_id":"s-9f2c...","type":"MSG"}
//! ```
//!
//! `payload` is omitted when empty. `session_id` is required on
//! session-scoped frames and forbidden on HELLO, WELCOME, PING and PONG.
//! Wire session ids are opaque: internal ids name participants and must
//! never reach a client.

use std::fmt;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_json};
use crate::domain::Format;
use crate::session::{Claim, Deadline};

/// Longest accepted frame line, newline included.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameType {
    Hello,
    Welcome,
    SessionStart,
    Topic,
    Msg,
    VerdictRequest,
    Verdict,
    SessionEnd,
    Ping,
    Pong,
    Error,
}

impl FrameType {
    pub const ALL: [FrameType; 11] = [
        FrameType::Hello,
        FrameType::Welcome,
        FrameType::SessionStart,
        FrameType::Topic,
        FrameType::Msg,
        FrameType::VerdictRequest,
        FrameType::Verdict,
        FrameType::SessionEnd,
        FrameType::Ping,
        FrameType::Pong,
        FrameType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FrameType::Hello => "HELLO",
            FrameType::Welcome => "WELCOME",
            FrameType::SessionStart => "SESSION_START",
            FrameType::Topic => "TOPIC",
            FrameType::Msg => "MSG",
            FrameType::VerdictRequest => "VERDICT_REQUEST",
            FrameType::Verdict => "VERDICT",
            FrameType::SessionEnd => "SESSION_END",
            FrameType::Ping => "PING",
            FrameType::Pong => "PONG",
            FrameType::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        FrameType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    fn session_scope(self) -> Scope {
        match self {
            FrameType::Hello | FrameType::Welcome | FrameType::Ping | FrameType::Pong => Scope::Forbidden,
            FrameType::Error => Scope::Optional,
            _ => Scope::Required,
        }
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope {
    Required,
    Optional,
    Forbidden,
}

/// A participant's part in a session, as told to that participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// One-to-one: converses with and judges the partner.
    Conversant,
    /// One-to-two: interrogates both players and names the human.
    Judge,
    /// One-to-two: one of the pair being interrogated.
    Player,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndStatus {
    Closed,
    Voided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    UnknownType,
    SchemaViolation,
    OutOfOrder,
    AuthRejected,
    IllegalAction,
    DuplicateVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Payload {
    Hello {
        token: String,
    },
    Welcome {
        alias: String,
    },
    SessionStart {
        role: Role,
        format: Format,
        you: String,
        partners: Vec<String>,
        /// Absent when the timer is hidden from participants.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline: Option<Deadline>,
    },
    Topic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic: Option<String>,
        /// Alias of the participant who picks the topic.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chooser: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        remaining_seconds: Option<u64>,
    },
    Msg {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<String>,
    },
    VerdictRequest {
        options: Vec<String>,
    },
    Verdict {
        claim: Claim,
    },
    SessionEnd {
        status: EndStatus,
    },
    Ping {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        remaining_seconds: Option<u64>,
    },
    Pong,
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Payload {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Payload::Hello { .. } => FrameType::Hello,
            Payload::Welcome { .. } => FrameType::Welcome,
            Payload::SessionStart { .. } => FrameType::SessionStart,
            Payload::Topic { .. } => FrameType::Topic,
            Payload::Msg { .. } => FrameType::Msg,
            Payload::VerdictRequest { .. } => FrameType::VerdictRequest,
            Payload::Verdict { .. } => FrameType::Verdict,
            Payload::SessionEnd { .. } => FrameType::SessionEnd,
            Payload::Ping { .. } => FrameType::Ping,
            Payload::Pong => FrameType::Pong,
            Payload::Error { .. } => FrameType::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub seq: u64,
    pub session_id: Option<String>,
    pub payload: Payload,
}

impl Frame {
    pub fn new(seq: u64, payload: Payload) -> Self {
        Frame { seq, session_id: None, payload }
    }

    pub fn in_session(seq: u64, session_id: impl Into<String>, payload: Payload) -> Self {
        Frame { seq, session_id: Some(session_id.into()), payload }
    }

    pub fn frame_type(&self) -> FrameType {
        self.payload.frame_type()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown frame type {0:?}")]
    UnknownType(String),
    #[error("{frame_type} frame violates its schema: {message}")]
    SchemaViolation { frame_type: FrameType, message: String },
    #[error("cannot encode {frame_type} frame: {message}")]
    UnencodableFrame { frame_type: FrameType, message: String },
    #[error("out-of-order frame: seq {got} after {last}")]
    OutOfOrder { last: u64, got: u64 },
}

impl FrameError {
    /// The code sent back to a peer in an ERROR frame.
    pub fn code(&self) -> ErrorCode {
        match self {
            FrameError::MalformedFrame(_) => ErrorCode::MalformedFrame,
            FrameError::UnknownType(_) => ErrorCode::UnknownType,
            FrameError::SchemaViolation { .. } | FrameError::UnencodableFrame { .. } => ErrorCode::SchemaViolation,
            FrameError::OutOfOrder { .. } => ErrorCode::OutOfOrder,
        }
    }
}

fn check_scope(frame_type: FrameType, session_id: &Option<String>) -> Result<(), String> {
    match (frame_type.session_scope(), session_id) {
        (Scope::Required, None) => Err("session_id is required".into()),
        (Scope::Forbidden, Some(_)) => Err("session_id is not allowed".into()),
        (_, Some(s)) if s.is_empty() => Err("session_id is empty".into()),
        _ => Ok(()),
    }
}

/// Encode as one canonical JSON line, newline included.
pub fn encode_frame(frame: &Frame) -> Result<String, FrameError> {
    let frame_type = frame.frame_type();
    let unencodable = |message: String| FrameError::UnencodableFrame { frame_type, message };
    check_scope(frame_type, &frame.session_id).map_err(unencodable)?;
    let mut obj = match serde_json::to_value(&frame.payload).map_err(|e| unencodable(e.to_string()))? {
        Value::Object(obj) => obj,
        other => return Err(unencodable(format!("payload serialized to {other}"))),
    };
    if obj.get("payload").is_some_and(|p| p.as_object().is_some_and(Map::is_empty)) {
        obj.remove("payload");
    }
    obj.insert("seq".into(), frame.seq.into());
    if let Some(sid) = &frame.session_id {
        obj.insert("session_id".into(), sid.clone().into());
    }
    let mut line = to_canonical_json(&Value::Object(obj)).map_err(|e| unencodable(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

/// Decode one line; a single trailing newline (or CRLF) is accepted.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let malformed = |m: &str| FrameError::MalformedFrame(m.to_string());
    let text = std::str::from_utf8(bytes).map_err(|_| malformed("not UTF-8"))?;
    let text = text.strip_suffix('\n').map(|t| t.strip_suffix('\r').unwrap_or(t)).unwrap_or(text);
    if text.contains('\n') {
        return Err(malformed("more than one line"));
    }
    let value: Value = serde_json::from_str(text).map_err(|e| FrameError::MalformedFrame(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed("not a JSON object"));
    };
    let type_name = match obj.get("type") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(malformed("missing string field \"type\"")),
    };
    let frame_type = FrameType::parse(&type_name).ok_or(FrameError::UnknownType(type_name))?;
    let violation = |message: String| FrameError::SchemaViolation { frame_type, message };
    let seq = match obj.remove("seq") {
        Some(v) => v.as_u64().ok_or_else(|| violation("seq must be a non-negative integer".into()))?,
        None => return Err(violation("seq is required".into())),
    };
    let session_id = match obj.remove("session_id") {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(violation("session_id must be a string".into())),
    };
    check_scope(frame_type, &session_id).map_err(violation)?;
    if let Some(extra) = obj.keys().find(|k| *k != "type" && *k != "payload") {
        return Err(violation(format!("unknown field {extra:?}")));
    }
    if frame_type != FrameType::Pong && !obj.contains_key("payload") {
        obj.insert("payload".into(), Value::Object(Map::new()));
    }
    let payload: Payload = serde_json::from_value(Value::Object(obj)).map_err(|e| violation(e.to_string()))?;
    Ok(Frame { seq, session_id, payload })
}

/// Read one frame line, refusing lines longer than [`MAX_FRAME_BYTES`].
/// Returns `Ok(None)` at end of stream.
pub fn read_frame_line<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>) -> std::io::Result<Option<Result<Frame, FrameError>>> {
    buf.clear();
    let n = (&mut *reader).take(MAX_FRAME_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        let why = if n > MAX_FRAME_BYTES { "frame too long" } else { "truncated frame" };
        return Ok(Some(Err(FrameError::MalformedFrame(why.into()))));
    }
    Ok(Some(decode_frame(buf)))
}

/// Enforces strictly increasing `seq` on one connection. Out-of-order frames
/// are rejected, never buffered.
#[derive(Debug, Clone, Default)]
pub struct SeqTracker {
    last: Option<u64>,
}

impl SeqTracker {
    pub fn accept(&mut self, seq: u64) -> Result<(), FrameError> {
        if let Some(last) = self.last {
            if seq <= last {
                return Err(FrameError::OutOfOrder { last, got: seq });
            }
        }
        self.last = Some(seq);
        Ok(())
    }

    pub fn last(&self) -> Option<u64> {
        self.last
    }
}

/// Outbound sequence numbers for one connection, starting at 1.
#[derive(Debug, Clone, Default)]
pub struct SeqCounter(u64);

impl SeqCounter {
    pub fn next_seq(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }
}

/// Opaque, per-tournament session id for the wire.
pub fn wire_session_id(master_seed: u64, session_id: &str) -> String {
    let digest = sha256_hex(format!("{master_seed}:{session_id}").as_bytes());
    format!("s-{}", &digest[..16])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_is_canonical() {
        assert_eq!(encode_frame(&Frame::new(7, Payload::Ping { remaining_seconds: None })).unwrap(), "{\"seq\":7,\"type\":\"PING\"}\n");
    }

    #[test]
    fn newline_in_text_is_escaped() {
        let f = Frame::in_session(3, "s-1", Payload::Msg { text: "a\nb".into(), from: None, to: None });
        let line = encode_frame(&f).unwrap();
        assert_eq!(line.matches('\n').count(), 1);
        assert!(line.contains("a\\nb"));
        assert_eq!(decode_frame(line.as_bytes()).unwrap(), f);
    }

    #[test]
    fn session_scope_is_enforced_both_ways() {
        let missing = Frame::new(1, Payload::Msg { text: "x".into(), from: None, to: None });
        assert!(matches!(encode_frame(&missing), Err(FrameError::UnencodableFrame { .. })));
        let extra = Frame::in_session(1, "s", Payload::Hello { token: "t".into() });
        assert!(matches!(encode_frame(&extra), Err(FrameError::UnencodableFrame { .. })));
        assert!(matches!(
            decode_frame(br#"{"payload":{"text":"x"},"seq":1,"type":"MSG"}"#),
            Err(FrameError::SchemaViolation { frame_type: FrameType::Msg, .. })
        ));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_frame(b"{\"seq\":1,\"ty"), Err(FrameError::MalformedFrame(_))));
        assert_eq!(decode_frame(br#"{"seq":1,"type":"TELEPORT"}"#), Err(FrameError::UnknownType("TELEPORT".into())));
        assert!(matches!(decode_frame(br#"{"payload":{"tok":"x"},"seq":1,"type":"HELLO"}"#), Err(FrameError::SchemaViolation { .. })));
        assert!(matches!(decode_frame(br#"{"seq":-1,"type":"PONG"}"#), Err(FrameError::SchemaViolation { .. })));
        assert!(matches!(decode_frame(br#"{"seq":1,"type":"PONG","x":1}"#), Err(FrameError::SchemaViolation { .. })));
        assert!(matches!(decode_frame(b"[1]"), Err(FrameError::MalformedFrame(_))));
    }

    #[test]
    fn seq_must_increase() {
        let mut t = SeqTracker::default();
        t.accept(1).unwrap();
        t.accept(5).unwrap();
        assert_eq!(t.accept(5), Err(FrameError::OutOfOrder { last: 5, got: 5 }));
        assert_eq!(t.accept(2), Err(FrameError::OutOfOrder { last: 5, got: 2 }));
        t.accept(6).unwrap();
    }

    #[test]
    fn overlong_and_truncated_lines() {
        let mut input = std::io::Cursor::new(b"{\"seq\":1,\"type\":\"PONG\"}\n{\"seq\":2".to_vec());
        let mut buf = Vec::new();
        assert!(read_frame_line(&mut input, &mut buf).unwrap().unwrap().is_ok());
        assert!(matches!(read_frame_line(&mut input, &mut buf).unwrap().unwrap(), Err(FrameError::MalformedFrame(_))));
        assert!(read_frame_line(&mut input, &mut buf).unwrap().is_none());

        let long = format!("{}\n", "x".repeat(MAX_FRAME_BYTES + 10));
        let mut input = std::io::Cursor::new(long.into_bytes());
        assert_eq!(
            read_frame_line(&mut input, &mut buf).unwrap().unwrap(),
            Err(FrameError::MalformedFrame("frame too long".into()))
        );
    }

    #[test]
    fn wire_ids_hide_participants() {
        let id = wire_session_id(42, "o2o:alice:bot7");
        assert!(id.starts_with("s-") && id.len() == 18);
        assert!(!id.contains("alice") && !id.contains("bot7"));
        assert_ne!(id, wire_session_id(43, "o2o:alice:bot7"));
    }
}
