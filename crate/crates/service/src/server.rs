//! The live tournament service.
//!
//! All connections funnel into one [`Hub`] behind a mutex, which makes it
//! both the per-session serializer and the single log appender. Each
//! connection runs on its own thread and owns its outbound `seq` counter.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use metaturing::domain::{DurationPolicy, Format, Participant, TournamentConfig, TopicPolicy};
use metaturing::eventlog::{reports_digest, LogWriter, Record};
use metaturing::protocol::{
    decode_frame, encode_frame, wire_session_id, EndStatus, ErrorCode, Frame, Payload, Role, SeqCounter, SeqTracker,
};
use metaturing::scoring::{evaluate_meta, JudgmentMatrix, PassReport};
use metaturing::session::{duration_deadline, EventKind, Phase, SessionError, SessionState};
use metaturing::tournament::TournamentSetup;

use crate::transport::{LineTransport, Polled, Transport, WsTransport};

const TICK: Duration = Duration::from_millis(100);

/// One enrolled participant and the bearer token it presents in HELLO.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Enrollment {
    pub participant: Participant,
    pub token: String,
}

/// Contents of the `serve --config` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub tournament: TournamentConfig,
    pub master_seed: u64,
    pub participants: Vec<Enrollment>,
}

impl ServeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ServeConfig = serde_json::from_str(text).context("parsing serve config")?;
        let mut seen = BTreeSet::new();
        for e in &c.participants {
            if e.token.is_empty() {
                bail!("participant {} has an empty token", e.participant.id);
            }
            if !seen.insert(&e.token) {
                bail!("token of participant {} is not unique", e.participant.id);
            }
        }
        Ok(c)
    }

    fn roster(&self) -> Vec<Participant> {
        self.participants.iter().map(|e| e.participant.clone()).collect()
    }
}

enum Outbound {
    Frame(Option<String>, Payload),
    Close,
}

struct Conn {
    id: u64,
    tx: Sender<Outbound>,
}

struct Live {
    state: SessionState,
    wire_id: String,
    started: Option<Instant>,
    last_ping: u64,
}

type Rejection = (ErrorCode, String);

fn illegal(msg: impl Into<String>) -> Rejection {
    (ErrorCode::IllegalAction, msg.into())
}

/// Tournament state shared by every connection.
pub struct Hub {
    setup: TournamentSetup,
    tokens: BTreeMap<String, String>,
    sessions: Vec<Live>,
    by_wire: BTreeMap<String, usize>,
    conns: BTreeMap<String, Conn>,
    busy: BTreeSet<String>,
    log: LogWriter<Box<dyn Write + Send>>,
    outcome: Option<Result<Vec<PassReport>, String>>,
}

impl Hub {
    pub fn new(config: &ServeConfig, log: Box<dyn Write + Send>) -> Result<Hub> {
        let setup = TournamentSetup::prepare(&config.tournament, &config.roster(), config.master_seed)?;
        let alias_of: BTreeMap<_, _> = setup.roster.iter().map(|p| (&p.id, p.display_alias.clone())).collect();
        let tokens = config
            .participants
            .iter()
            .map(|e| (e.token.clone(), alias_of[&e.participant.id].clone()))
            .collect();
        let mut log = LogWriter::new(log);
        setup.write_preamble(&mut log, None).context("writing log preamble")?;
        let sessions: Vec<Live> = setup
            .sessions
            .iter()
            .map(|(plan, roster)| Live {
                state: SessionState::new(plan.clone(), roster.clone()),
                wire_id: wire_session_id(setup.master_seed, plan.session_id.as_str()),
                started: None,
                last_ping: 0,
            })
            .collect();
        let by_wire = sessions.iter().enumerate().map(|(i, s)| (s.wire_id.clone(), i)).collect();
        Ok(Hub {
            setup,
            tokens,
            sessions,
            by_wire,
            conns: BTreeMap::new(),
            busy: BTreeSet::new(),
            log,
            outcome: None,
        })
    }

    pub fn config(&self) -> &TournamentConfig {
        &self.setup.config
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    fn send(&self, alias: &str, session: Option<&str>, payload: Payload) {
        if let Some(c) = self.conns.get(alias) {
            let _ = c.tx.send(Outbound::Frame(session.map(str::to_string), payload));
        }
    }

    fn send_session(&self, idx: usize, alias: &str, payload: Payload) {
        self.send(alias, Some(&self.sessions[idx].wire_id), payload);
    }

    /// Seconds of virtual time for session `idx` at wall instant `now`.
    fn virtual_time(&self, idx: usize, now: Instant) -> u64 {
        let s = &self.sessions[idx];
        let elapsed = s.started.map_or(0, |t| now.saturating_duration_since(t).as_secs());
        elapsed.max(s.state.last_time())
    }

    fn remaining(&self, vt: u64) -> Option<u64> {
        if !self.setup.config.timer_visible {
            return None;
        }
        match self.setup.config.duration_policy {
            DurationPolicy::Timed { seconds } => Some(seconds.saturating_sub(vt)),
            DurationPolicy::OpenEnded { hard_cap_seconds } => Some(hard_cap_seconds.saturating_sub(vt)),
            DurationPolicy::MessageBudget { .. } => None,
        }
    }

    /// Apply one event and append it to the log.
    fn record(&mut self, idx: usize, kind: EventKind, vt: u64) -> Result<(), SessionError> {
        let config = &self.setup.config;
        let live = &mut self.sessions[idx];
        let event = live.state.push(kind, vt, config)?.clone();
        let record = Record::Event { session_id: live.state.plan.session_id.clone(), event };
        if let Err(e) = self.log.append(&record) {
            self.fail(format!("event log write failed: {e}"));
        }
        Ok(())
    }

    fn fail(&mut self, reason: String) {
        if self.outcome.is_none() {
            self.outcome = Some(Err(reason));
            self.close_all();
        }
    }

    fn close_all(&self) {
        for c in self.conns.values() {
            let _ = c.tx.send(Outbound::Close);
        }
    }

    fn hello(&mut self, token: &str, conn: Conn, now: Instant) -> Result<String, Rejection> {
        let alias = self.tokens.get(token).cloned().ok_or((ErrorCode::AuthRejected, "unknown token".into()))?;
        if self.is_finished() {
            return Err((ErrorCode::AuthRejected, "tournament is over".into()));
        }
        if self.conns.contains_key(&alias) {
            return Err((ErrorCode::AuthRejected, "already connected".into()));
        }
        self.conns.insert(alias.clone(), conn);
        self.send(&alias, None, Payload::Welcome { alias: alias.clone() });
        self.start_ready(now);
        Ok(alias)
    }

    fn disconnect(&mut self, alias: &str, conn_id: u64, now: Instant) {
        if self.conns.get(alias).map(|c| c.id) != Some(conn_id) {
            return;
        }
        self.conns.remove(alias);
        if self.is_finished() {
            return;
        }
        let active: Vec<usize> = (0..self.sessions.len())
            .filter(|&i| {
                let s = &self.sessions[i].state;
                s.phase != Phase::AwaitingStart && !s.phase.is_terminal() && s.roster.contains(alias)
            })
            .collect();
        for idx in active {
            let vt = self.virtual_time(idx, now);
            let reason = format!("{alias} disconnected");
            if self.record(idx, EventKind::Voided { reason }, vt).is_ok() {
                self.finish_session(idx, EndStatus::Voided, now);
            }
        }
    }

    /// Start every scheduled session whose participants are all connected
    /// and idle, in schedule order.
    fn start_ready(&mut self, now: Instant) {
        for idx in 0..self.sessions.len() {
            let s = &self.sessions[idx].state;
            let ready = s.phase == Phase::AwaitingStart
                && s.roster.all().iter().all(|a| self.conns.contains_key(a) && !self.busy.contains(a));
            if ready {
                self.start_session(idx, now);
            }
        }
    }

    fn start_session(&mut self, idx: usize, now: Instant) {
        self.sessions[idx].started = Some(now);
        if self.record(idx, EventKind::Started, 0).is_err() {
            return;
        }
        let config = self.setup.config.clone();
        let roster = self.sessions[idx].state.roster.clone();
        let deadline = config.timer_visible.then(|| duration_deadline(&config));
        for alias in roster.all() {
            self.busy.insert(alias.clone());
            let (role, partners) = match &roster.judge {
                None => (Role::Conversant, roster.players.iter().filter(|p| **p != alias).cloned().collect()),
                Some(j) if *j == alias => (Role::Judge, roster.players.to_vec()),
                Some(j) => (Role::Player, vec![j.clone()]),
            };
            let start = Payload::SessionStart { role, format: config.format, you: alias.clone(), partners, deadline };
            self.send_session(idx, &alias, start);
        }
        let remaining = self.remaining(0);
        match &config.topic_policy {
            TopicPolicy::Unrestricted => {}
            TopicPolicy::ExternalSchedule { .. } => self.next_external_topic(idx, 0),
            TopicPolicy::HalfSplit => {
                let chooser = Some(roster.players[0].clone());
                for alias in roster.all() {
                    self.send_session(idx, &alias, Payload::Topic { topic: None, chooser: chooser.clone(), remaining_seconds: remaining });
                }
            }
        }
        if matches!(config.duration_policy, DurationPolicy::OpenEnded { .. }) {
            self.request_verdicts(idx);
        }
    }

    /// Under an external schedule, log and announce the topic for `vt` if
    /// it differs from the one in force.
    fn next_external_topic(&mut self, idx: usize, vt: u64) {
        let TopicPolicy::ExternalSchedule { interval_seconds, topics } = &self.setup.config.topic_policy else {
            return;
        };
        let topic = topics[(vt / interval_seconds) as usize % topics.len()].clone();
        let current = match &self.sessions[idx].state.phase {
            Phase::Conversing { topic, .. } => topic.clone(),
            _ => return,
        };
        if current.as_deref() == Some(topic.as_str()) {
            return;
        }
        if self.record(idx, EventKind::TopicSet { topic: topic.clone(), chooser: None }, vt).is_ok() {
            let remaining = self.remaining(vt);
            for alias in self.sessions[idx].state.roster.all() {
                self.send_session(idx, &alias, Payload::Topic { topic: Some(topic.clone()), chooser: None, remaining_seconds: remaining });
            }
        }
    }

    fn request_verdicts(&self, idx: usize) {
        let s = &self.sessions[idx].state;
        for judge in s.pending_judges() {
            let options = match s.format() {
                Format::OneToOne => s.roster.players.iter().filter(|p| **p != judge).cloned().collect(),
                Format::OneToTwo => s.roster.players.to_vec(),
            };
            self.send_session(idx, &judge, Payload::VerdictRequest { options });
        }
    }

    /// Append `Expired` if the duration policy is exhausted at `vt`.
    fn check_expiry(&mut self, idx: usize, vt: u64) {
        if self.sessions[idx].state.expiry_due(&self.setup.config, vt) && self.record(idx, EventKind::Expired, vt).is_ok() {
            self.request_verdicts(idx);
        }
    }

    fn finish_session(&mut self, idx: usize, status: EndStatus, now: Instant) {
        for alias in self.sessions[idx].state.roster.all() {
            self.busy.remove(&alias);
            self.send_session(idx, &alias, Payload::SessionEnd { status });
        }
        if self.sessions.iter().all(|s| s.state.phase.is_terminal()) {
            self.complete();
        } else {
            self.start_ready(now);
        }
    }

    /// Score the quiesced tournament and write the checkpoint.
    fn complete(&mut self) {
        let kinds = self.setup.kinds();
        let scored = JudgmentMatrix::from_sessions(self.setup.config.format, kinds, self.sessions.iter().map(|s| &s.state))
            .and_then(|m| evaluate_meta(&m, &self.setup.config))
            .map_err(|e| format!("scoring failed: {e}"));
        let outcome = match scored {
            Ok(reports) => match self.log.append(&Record::Scored { reports_digest: reports_digest(&reports) }) {
                Ok(()) => Ok(reports),
                Err(e) => Err(format!("event log write failed: {e}")),
            },
            Err(e) => Err(e),
        };
        self.outcome = Some(outcome);
        self.close_all();
    }

    fn handle(&mut self, alias: &str, frame: Frame, now: Instant) -> Result<(), Rejection> {
        let session = frame.session_id;
        match frame.payload {
            Payload::Ping { .. } => {
                self.send(alias, None, Payload::Pong);
                Ok(())
            }
            Payload::Pong => Ok(()),
            Payload::Msg { text, to, .. } => {
                let idx = self.member_session(alias, session)?;
                self.message(idx, alias, text, to, now)
            }
            Payload::Verdict { claim } => {
                let idx = self.member_session(alias, session)?;
                if self.sessions[idx].state.verdicts.contains_key(alias) {
                    return Err((ErrorCode::DuplicateVerdict, format!("{alias} already submitted a verdict")));
                }
                let vt = self.virtual_time(idx, now);
                self.check_expiry(idx, vt);
                self.record(idx, EventKind::VerdictSubmitted { judge: alias.to_string(), claim }, vt)
                    .map_err(|e| match e {
                        SessionError::DuplicateVerdict(_) => (ErrorCode::DuplicateVerdict, e.to_string()),
                        other => illegal(other.to_string()),
                    })?;
                if self.sessions[idx].state.all_verdicts_in() && self.record(idx, EventKind::Closed, vt).is_ok() {
                    self.finish_session(idx, EndStatus::Closed, now);
                }
                Ok(())
            }
            Payload::Topic { topic: Some(topic), .. } => {
                let idx = self.member_session(alias, session)?;
                if self.setup.config.topic_policy != TopicPolicy::HalfSplit {
                    return Err(illegal("topics are not chosen by players under this policy"));
                }
                let vt = self.virtual_time(idx, now);
                self.check_expiry(idx, vt);
                let kind = EventKind::TopicSet { topic: topic.clone(), chooser: Some(alias.to_string()) };
                self.record(idx, kind, vt).map_err(|e| illegal(e.to_string()))?;
                let remaining = self.remaining(vt);
                for a in self.sessions[idx].state.roster.all() {
                    let payload = Payload::Topic { topic: Some(topic.clone()), chooser: Some(alias.to_string()), remaining_seconds: remaining };
                    self.send_session(idx, &a, payload);
                }
                Ok(())
            }
            Payload::Hello { .. } => Err(illegal("already authenticated")),
            other => Err(illegal(format!("{} frames are sent by the server only", other.frame_type()))),
        }
    }

    fn member_session(&self, alias: &str, session: Option<String>) -> Result<usize, Rejection> {
        let sid = session.ok_or_else(|| illegal("session_id required"))?;
        let idx = *self.by_wire.get(&sid).ok_or_else(|| illegal(format!("unknown session {sid}")))?;
        if !self.sessions[idx].state.roster.contains(alias) {
            return Err(illegal(format!("not a member of session {sid}")));
        }
        Ok(idx)
    }

    fn message(&mut self, idx: usize, alias: &str, text: String, to: Option<String>, now: Instant) -> Result<(), Rejection> {
        let roster = self.sessions[idx].state.roster.clone();
        let recipient = match (&roster.judge, to) {
            (None, to) => {
                let partner = roster.players.iter().find(|p| *p != alias).cloned().expect("one-to-one has two players");
                if to.is_some_and(|t| t != partner) {
                    return Err(illegal("one-to-one messages go to the partner"));
                }
                partner
            }
            (Some(j), Some(to)) if j == alias && roster.players.contains(&to) => to,
            (Some(j), _) if j == alias => return Err(illegal("a judge must address one player with \"to\"")),
            (Some(j), to) => {
                if to.is_some_and(|t| t != *j) {
                    return Err(illegal("players may only address the judge"));
                }
                j.clone()
            }
        };
        let vt = self.virtual_time(idx, now);
        self.check_expiry(idx, vt);
        let half_before = half(&self.sessions[idx].state);
        let kind = EventKind::Utterance { author: alias.to_string(), text: text.clone() };
        self.record(idx, kind, vt).map_err(|e| illegal(e.to_string()))?;
        self.send_session(idx, &recipient, Payload::Msg { text, from: Some(alias.to_string()), to: None });
        let state = &self.sessions[idx].state;
        if self.setup.config.topic_policy == TopicPolicy::HalfSplit && half_before == Some(1) && half(state) == Some(2) {
            let chooser = Some(roster.players[1].clone());
            let remaining = self.remaining(vt);
            for a in roster.all() {
                self.send_session(idx, &a, Payload::Topic { topic: None, chooser: chooser.clone(), remaining_seconds: remaining });
            }
        }
        self.check_expiry(idx, vt);
        Ok(())
    }

    /// Clock-driven work: expiry, scheduled topics and countdown pings.
    fn tick(&mut self, now: Instant) {
        for idx in 0..self.sessions.len() {
            if !matches!(self.sessions[idx].state.phase, Phase::Conversing { .. }) {
                continue;
            }
            let vt = self.virtual_time(idx, now);
            self.next_external_topic(idx, vt);
            self.check_expiry(idx, vt);
            if let Some(remaining) = self.remaining(vt) {
                if vt > self.sessions[idx].last_ping && matches!(self.sessions[idx].state.phase, Phase::Conversing { .. }) {
                    self.sessions[idx].last_ping = vt;
                    for a in self.sessions[idx].state.roster.all() {
                        self.send(&a, None, Payload::Ping { remaining_seconds: Some(remaining) });
                    }
                }
            }
        }
    }
}

fn half(state: &SessionState) -> Option<u8> {
    match state.phase {
        Phase::Conversing { half, .. } => Some(half),
        _ => None,
    }
}

struct Shared {
    hub: Mutex<Hub>,
    done: Condvar,
    stop: AtomicBool,
    next_conn: AtomicU64,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Hub> {
        self.hub.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn notify_if_finished(&self, hub: &Hub) {
        if hub.is_finished() {
            self.done.notify_all();
        }
    }
}

/// A running service. Dropping it without [`Server::wait`] leaves the
/// threads running until the tournament completes.
pub struct Server {
    shared: Arc<Shared>,
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    /// Write the log preamble and start accepting on `tcp` and, if given,
    /// the WebSocket listener `ws`.
    pub fn start(
        config: &ServeConfig,
        log: Box<dyn Write + Send>,
        tcp: TcpListener,
        ws: Option<TcpListener>,
    ) -> Result<Server> {
        let hub = Hub::new(config, log)?;
        let shared = Arc::new(Shared {
            hub: Mutex::new(hub),
            done: Condvar::new(),
            stop: AtomicBool::new(false),
            next_conn: AtomicU64::new(1),
            workers: Mutex::new(Vec::new()),
        });
        let tcp_addr = tcp.local_addr()?;
        let ws_addr = ws.as_ref().map(TcpListener::local_addr).transpose()?;
        let mut threads = vec![spawn_acceptor(shared.clone(), tcp, false)?];
        if let Some(ws) = ws {
            threads.push(spawn_acceptor(shared.clone(), ws, true)?);
        }
        let ticker = shared.clone();
        threads.push(thread::spawn(move || {
            while !ticker.stop.load(Ordering::SeqCst) {
                thread::sleep(TICK);
                let mut hub = ticker.lock();
                if !hub.is_finished() {
                    hub.tick(Instant::now());
                }
                ticker.notify_if_finished(&hub);
            }
        }));
        Ok(Server { shared, tcp_addr, ws_addr, threads })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Block until every session is closed or voided, then return the
    /// reports that were checkpointed into the log.
    pub fn wait(self) -> Result<Vec<PassReport>> {
        let outcome = {
            let mut hub = self.shared.lock();
            while !hub.is_finished() {
                hub = self.shared.done.wait(hub).unwrap_or_else(|p| p.into_inner());
            }
            hub.outcome.clone().expect("finished hub has an outcome")
        };
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads {
            let _ = t.join();
        }
        let workers = std::mem::take(&mut *self.shared.workers.lock().unwrap_or_else(|p| p.into_inner()));
        for w in workers {
            let _ = w.join();
        }
        outcome.map_err(|e| anyhow!(e))
    }
}

fn spawn_acceptor(shared: Arc<Shared>, listener: TcpListener, websocket: bool) -> io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !shared.stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let s = shared.clone();
                    let worker = thread::spawn(move || {
                        let transport: io::Result<Box<dyn Transport>> = if websocket {
                            WsTransport::accept(stream).map(|t| Box::new(t) as _)
                        } else {
                            LineTransport::new(stream).map(|t| Box::new(t) as _)
                        };
                        if let Ok(t) = transport {
                            serve_connection(&s, t);
                        }
                    });
                    shared.workers.lock().unwrap_or_else(|p| p.into_inner()).push(worker);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(_) => thread::sleep(Duration::from_millis(10)),
            }
        }
    }))
}

fn serve_connection(shared: &Shared, mut transport: Box<dyn Transport>) {
    let conn_id = shared.next_conn.fetch_add(1, Ordering::SeqCst);
    let (tx, rx): (Sender<Outbound>, Receiver<Outbound>) = mpsc::channel();
    let mut out = SeqCounter::default();
    let mut inbound = SeqTracker::default();
    let mut alias: Option<String> = None;
    let mut send = |t: &mut Box<dyn Transport>, session: Option<String>, payload: Payload| -> bool {
        let frame = Frame { seq: out.next_seq(), session_id: session, payload };
        match encode_frame(&frame) {
            Ok(line) => t.send(&line).is_ok(),
            Err(_) => true,
        }
    };
    'conn: loop {
        while let Ok(msg) = rx.try_recv() {
            match msg {
                Outbound::Frame(session, payload) => {
                    if !send(&mut transport, session, payload) {
                        break 'conn;
                    }
                }
                Outbound::Close => {
                    transport.close();
                    break 'conn;
                }
            }
        }
        if shared.stop.load(Ordering::SeqCst) {
            transport.close();
            break;
        }
        let bytes = match transport.poll() {
            Polled::Idle => continue,
            Polled::Closed => break,
            Polled::TooLong => {
                let err = Payload::Error { code: ErrorCode::MalformedFrame, message: "frame too long".into() };
                send(&mut transport, None, err);
                transport.close();
                break;
            }
            Polled::Frame(bytes) => bytes,
        };
        let frame = match decode_frame(&bytes).and_then(|f| inbound.accept(f.seq).map(|_| f)) {
            Ok(f) => f,
            Err(e) => {
                send(&mut transport, None, Payload::Error { code: e.code(), message: e.to_string() });
                continue;
            }
        };
        let session = frame.session_id.clone();
        let now = Instant::now();
        let rejected = match (&alias, frame.payload) {
            (None, Payload::Hello { token }) => {
                let mut hub = shared.lock();
                match hub.hello(&token, Conn { id: conn_id, tx: tx.clone() }, now) {
                    Ok(a) => {
                        alias = Some(a);
                        None
                    }
                    Err(r) => Some((r, true)),
                }
            }
            (None, _) => Some(((ErrorCode::AuthRejected, "send HELLO first".into()), false)),
            (Some(a), payload) => {
                let mut hub = shared.lock();
                let r = hub.handle(a, Frame { seq: frame.seq, session_id: session.clone(), payload }, now).err();
                shared.notify_if_finished(&hub);
                r.map(|r| (r, false))
            }
        };
        if let Some(((code, message), fatal)) = rejected {
            send(&mut transport, session, Payload::Error { code, message });
            if fatal {
                transport.close();
                break;
            }
        }
    }
    if let Some(a) = alias {
        let mut hub = shared.lock();
        hub.disconnect(&a, conn_id, Instant::now());
        shared.notify_if_finished(&hub);
    }
}

/// Connect a line transport to `addr`.
pub fn connect_tcp(addr: SocketAddr) -> io::Result<LineTransport> {
    LineTransport::new(TcpStream::connect(addr)?)
}

/// Connect a WebSocket transport to `addr`.
pub fn connect_ws(addr: SocketAddr) -> io::Result<WsTransport> {
    WsTransport::connect(TcpStream::connect(addr)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaturing::domain::Kind;
    use metaturing::session::Claim;

    fn config() -> ServeConfig {
        let mut tournament = TournamentConfig::strict(Format::OneToOne);
        tournament.duration_policy = DurationPolicy::MessageBudget { count: 2 };
        let participants = [("h1", Kind::Human), ("h2", Kind::Human), ("m1", Kind::Machine), ("m2", Kind::Machine)]
            .into_iter()
            .map(|(id, kind)| Enrollment {
                participant: if kind == Kind::Human { Participant::human(id) } else { Participant::machine(id) },
                token: format!("t-{id}"),
            })
            .collect();
        ServeConfig { tournament, master_seed: 3, participants }
    }

    fn drain(rx: &Receiver<Outbound>) -> Vec<(Option<String>, Payload)> {
        rx.try_iter()
            .filter_map(|o| match o {
                Outbound::Frame(s, p) => Some((s, p)),
                Outbound::Close => None,
            })
            .collect()
    }

    fn connect(hub: &mut Hub, id: u64, token: &str) -> (String, Receiver<Outbound>) {
        let (tx, rx) = mpsc::channel();
        let alias = hub.hello(token, Conn { id, tx }, Instant::now()).unwrap();
        (alias, rx)
    }

    #[test]
    fn tokens_must_be_present_and_unique() {
        let mut c = config();
        c.participants[1].token = c.participants[0].token.clone();
        assert!(ServeConfig::from_json(&serde_json::to_string(&c).unwrap()).is_err());
        c.participants[1].token.clear();
        assert!(ServeConfig::from_json(&serde_json::to_string(&c).unwrap()).is_err());
        assert!(ServeConfig::from_json(&serde_json::to_string(&config()).unwrap()).is_ok());
    }

    #[test]
    fn sessions_start_once_both_sides_are_connected() {
        let mut hub = Hub::new(&config(), Box::new(Vec::new())).unwrap();
        let (a, rx_a) = connect(&mut hub, 1, "t-h1");
        assert!(matches!(drain(&rx_a)[..], [(None, Payload::Welcome { .. })]));
        let (b, rx_b) = connect(&mut hub, 2, "t-m1");
        let started: Vec<_> = drain(&rx_b).into_iter().filter(|(_, p)| matches!(p, Payload::SessionStart { .. })).collect();
        assert_eq!(started.len(), 1);
        let (sid, Payload::SessionStart { you, partners, role, .. }) = &started[0] else { unreachable!() };
        assert_eq!((you, partners, *role), (&b, &vec![a.clone()], Role::Conversant));
        assert!(sid.as_ref().unwrap().starts_with("s-"));
        assert!(matches!(drain(&rx_a)[..], [(Some(_), Payload::SessionStart { .. })]));
    }

    #[test]
    fn budget_exhaustion_requests_verdicts_and_closes() {
        let mut hub = Hub::new(&config(), Box::new(Vec::new())).unwrap();
        let (a, rx_a) = connect(&mut hub, 1, "t-h1");
        let (b, rx_b) = connect(&mut hub, 2, "t-m1");
        drain(&rx_a);
        let sid = drain(&rx_b).into_iter().find_map(|(s, _)| s).unwrap();
        let msg = |text: &str| Frame::in_session(1, sid.clone(), Payload::Msg { text: text.into(), from: None, to: None });
        let now = Instant::now();
        hub.handle(&a, msg("hello"), now).unwrap();
        assert!(matches!(&drain(&rx_b)[..], [(_, Payload::Msg { from: Some(f), .. })] if *f == a));
        hub.handle(&b, msg("hi"), now).unwrap();
        let rejected = hub.handle(&a, msg("one more"), now).unwrap_err();
        assert_eq!(rejected.0, ErrorCode::IllegalAction);
        assert!(drain(&rx_a).iter().any(|(_, p)| matches!(p, Payload::VerdictRequest { options } if *options == vec![b.clone()])));
        let verdict = |target: &str| {
            Frame::in_session(2, sid.clone(), Payload::Verdict { claim: Claim::Label { target: target.into(), asserted: Kind::Human } })
        };
        hub.handle(&a, verdict(&b), now).unwrap();
        assert_eq!(hub.handle(&a, verdict(&b), now).unwrap_err().0, ErrorCode::DuplicateVerdict);
        hub.handle(&b, verdict(&a), now).unwrap();
        assert!(drain(&rx_b).iter().any(|(_, p)| *p == Payload::SessionEnd { status: EndStatus::Closed }));
    }

    #[test]
    fn only_the_live_connection_can_void() {
        let mut hub = Hub::new(&config(), Box::new(Vec::new())).unwrap();
        let (a, _rx_a) = connect(&mut hub, 1, "t-h1");
        let (_, rx_b) = connect(&mut hub, 2, "t-m1");
        drain(&rx_b);
        hub.disconnect(&a, 99, Instant::now());
        assert!(drain(&rx_b).is_empty());
        hub.disconnect(&a, 1, Instant::now());
        assert_eq!(drain(&rx_b).last().unwrap().1, Payload::SessionEnd { status: EndStatus::Voided });
        let voided = hub.sessions.iter().filter(|s| s.state.phase == Phase::Voided).count();
        assert_eq!(voided, 1);
    }

    #[test]
    fn server_only_frames_are_refused() {
        let mut hub = Hub::new(&config(), Box::new(Vec::new())).unwrap();
        let (a, _rx) = connect(&mut hub, 1, "t-h1");
        let welcome = Frame::new(1, Payload::Welcome { alias: a.clone() });
        assert_eq!(hub.handle(&a, welcome, Instant::now()).unwrap_err().0, ErrorCode::IllegalAction);
        let stray = Frame::in_session(2, "s-nope", Payload::Msg { text: "x".into(), from: None, to: None });
        assert_eq!(hub.handle(&a, stray, Instant::now()).unwrap_err().0, ErrorCode::IllegalAction);
    }
}
