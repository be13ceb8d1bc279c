//! A scripted participant for exercising a live server: greets each
//! partner, answers incoming messages, picks topics when asked and submits a
//! fixed-stance verdict.

use std::io;
use std::time::{Duration, Instant};

use metaturing::domain::{Format, Kind};
use metaturing::protocol::{decode_frame, encode_frame, EndStatus, ErrorCode, Frame, Payload, Role, SeqCounter};
use metaturing::session::Claim;

use crate::transport::{Polled, Transport};

/// Replies per session; messages past the server's budget are refused anyway.
const MAX_REPLIES: usize = 8;

/// What the bot claims when asked for a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stance {
    /// One-to-one: label the partner human. One-to-two: pick the first option.
    Trusting,
    /// One-to-one: label the partner machine. One-to-two: pick the second option.
    Suspicious,
}

#[derive(Debug, Clone)]
pub struct BotOptions {
    pub token: String,
    pub stance: Stance,
    /// Drop the connection without warning after sending this many MSG frames.
    pub vanish_after_messages: Option<usize>,
    /// Give up when the server has said nothing for this long.
    pub idle_timeout: Duration,
}

impl BotOptions {
    pub fn new(token: impl Into<String>, stance: Stance) -> Self {
        BotOptions {
            token: token.into(),
            stance,
            vanish_after_messages: None,
            idle_timeout: Duration::from_secs(20),
        }
    }
}

/// Everything the bot saw and did.
#[derive(Debug, Clone, Default)]
pub struct BotReport {
    pub alias: Option<String>,
    /// Every line received, verbatim.
    pub received: Vec<String>,
    /// Text of every MSG frame this bot sent.
    pub sent_texts: Vec<String>,
    pub errors: Vec<(ErrorCode, String)>,
    pub ended: Vec<EndStatus>,
    pub vanished: bool,
}

#[derive(Default)]
struct Current {
    id: String,
    format: Option<Format>,
    role: Option<Role>,
    replies: usize,
    voted: bool,
}

/// Drive one connection until the server closes it.
pub fn run_bot(mut transport: impl Transport, opts: &BotOptions) -> io::Result<BotReport> {
    let mut seq = SeqCounter::default();
    let mut report = BotReport::default();
    let mut send = |t: &mut dyn Transport, session: Option<&str>, payload: Payload| -> io::Result<()> {
        let frame = Frame { seq: seq.next_seq(), session_id: session.map(str::to_string), payload };
        let line = encode_frame(&frame).map_err(|e| io::Error::other(e.to_string()))?;
        t.send(&line)
    };
    send(&mut transport, None, Payload::Hello { token: opts.token.clone() })?;
    let mut cur = Current::default();
    let mut last_heard = Instant::now();
    loop {
        let bytes = match transport.poll() {
            Polled::Frame(b) => b,
            Polled::Idle if last_heard.elapsed() > opts.idle_timeout => {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "server went quiet"));
            }
            Polled::Idle => continue,
            Polled::Closed | Polled::TooLong => return Ok(report),
        };
        last_heard = Instant::now();
        report.received.push(String::from_utf8_lossy(&bytes).into_owned());
        let frame = decode_frame(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let sid = frame.session_id.clone();
        let mut msg = |t: &mut dyn Transport, report: &mut BotReport, session: &str, to: Option<String>| -> io::Result<bool> {
            let me = report.alias.clone().unwrap_or_default();
            let text = format!("{me} says hello #{}", report.sent_texts.len() + 1);
            send(t, Some(session), Payload::Msg { text: text.clone(), from: None, to })?;
            report.sent_texts.push(text);
            Ok(opts.vanish_after_messages.is_some_and(|n| report.sent_texts.len() >= n))
        };
        let vanish = match frame.payload {
            Payload::Welcome { alias } => {
                report.alias = Some(alias);
                false
            }
            Payload::SessionStart { role, format, partners, .. } => {
                cur = Current { id: sid.unwrap_or_default(), format: Some(format), role: Some(role), ..Current::default() };
                let mut gone = false;
                match role {
                    Role::Judge => {
                        for p in partners {
                            gone |= msg(&mut transport, &mut report, &cur.id, Some(p))?;
                        }
                    }
                    Role::Conversant | Role::Player => gone = msg(&mut transport, &mut report, &cur.id, None)?,
                }
                gone
            }
            Payload::Msg { from, .. } if sid.as_deref() == Some(cur.id.as_str()) && cur.replies < MAX_REPLIES => {
                cur.replies += 1;
                let to = if cur.role == Some(Role::Judge) { from } else { None };
                msg(&mut transport, &mut report, &cur.id, to)?
            }
            Payload::Topic { topic: None, chooser: Some(c), .. } if Some(&c) == report.alias.as_ref() => {
                let topic = format!("a topic picked by {c}");
                send(&mut transport, sid.as_deref(), Payload::Topic { topic: Some(topic), chooser: None, remaining_seconds: None })?;
                false
            }
            Payload::VerdictRequest { options } if !cur.voted && sid.as_deref() == Some(cur.id.as_str()) => {
                cur.voted = true;
                let claim = match (cur.format, opts.stance) {
                    (Some(Format::OneToOne), s) => Claim::Label {
                        target: options[0].clone(),
                        asserted: if s == Stance::Trusting { Kind::Human } else { Kind::Machine },
                    },
                    (_, Stance::Trusting) => Claim::PickHuman { human: options[0].clone() },
                    (_, Stance::Suspicious) => Claim::PickHuman { human: options[options.len() - 1].clone() },
                };
                send(&mut transport, sid.as_deref(), Payload::Verdict { claim })?;
                false
            }
            Payload::Ping { .. } => {
                send(&mut transport, None, Payload::Pong)?;
                false
            }
            Payload::SessionEnd { status } => {
                report.ended.push(status);
                false
            }
            Payload::Error { code, message } => {
                report.errors.push((code, message));
                false
            }
            _ => false,
        };
        if vanish {
            report.vanished = true;
            transport.close();
            return Ok(report);
        }
    }
}
