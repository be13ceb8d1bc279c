//! Event-sourced conversation sessions.
//!
//! A session is a pure fold of [`SessionEvent`]s through [`apply_event`].
//! Time is virtual and supplied with each event; the engine never reads a
//! clock, so replaying a transcript always reproduces the same state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DurationPolicy, Format, Kind, TopicPolicy, TournamentConfig};
use crate::scheduler::SessionPlan;

/// What a judge asserts at the end of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "claim", rename_all = "snake_case", deny_unknown_fields)]
pub enum Claim {
    /// One-to-one: the partner `target` is of kind `asserted`.
    Label { target: String, asserted: Kind },
    /// One-to-two: `human` is the human of the pair.
    PickHuman { human: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Started,
    TopicSet {
        topic: String,
        /// Alias of the player who chose it; absent for externally scheduled topics.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chooser: Option<String>,
    },
    Utterance {
        author: String,
        text: String,
    },
    VerdictSubmitted {
        judge: String,
        claim: Claim,
    },
    Expired,
    Closed,
    /// Terminal alternative to `Closed`: the session is excluded from scoring.
    Voided {
        reason: String,
    },
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::Started => "started",
            EventKind::TopicSet { .. } => "topic_set",
            EventKind::Utterance { .. } => "utterance",
            EventKind::VerdictSubmitted { .. } => "verdict_submitted",
            EventKind::Expired => "expired",
            EventKind::Closed => "closed",
            EventKind::Voided { .. } => "voided",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    /// Seconds since session start.
    pub virtual_time: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Display aliases of the people in one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRoster {
    pub players: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
}

impl SessionRoster {
    pub fn contains(&self, alias: &str) -> bool {
        self.players.iter().any(|p| p == alias) || self.judge.as_deref() == Some(alias)
    }

    pub fn judges(&self) -> Vec<String> {
        match &self.judge {
            Some(j) => vec![j.clone()],
            None => self.players.to_vec(),
        }
    }

    pub fn all(&self) -> Vec<String> {
        self.judge.iter().chain(self.players.iter()).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    AwaitingStart,
    Conversing {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic: Option<String>,
        half: u8,
    },
    AwaitingVerdicts {
        pending: BTreeSet<String>,
    },
    Closed,
    Voided,
}

impl Phase {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Closed | Phase::Voided)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::AwaitingStart => "awaiting_start",
            Phase::Conversing { .. } => "conversing",
            Phase::AwaitingVerdicts { .. } => "awaiting_verdicts",
            Phase::Closed => "closed",
            Phase::Voided => "voided",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("out-of-order event: expected seq {expected}, got {got}")]
    OutOfOrderEvent { expected: u64, got: u64 },
    #[error("virtual time went backwards: {got} after {last}")]
    TimeWentBackwards { last: u64, got: u64 },
    #[error("{event} is illegal in phase {phase}: {reason}")]
    IllegalInPhase { event: &'static str, phase: String, reason: &'static str },
    #[error("unknown author {0:?}")]
    UnknownAuthor(String),
    #[error("{0:?} is not a judge in this session")]
    NotAJudge(String),
    #[error("duplicate verdict from {0:?}")]
    DuplicateVerdict(String),
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
    #[error("topic {got:?} does not match the scheduled topic {expected:?}")]
    TopicMismatch { expected: String, got: String },
    #[error("{0:?} does not choose the topic in this half")]
    NotTopicChooser(String),
    #[error("topic directive requested under an unrestricted topic policy")]
    PolicyMismatch,
}

/// When a session's conversation phase ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "deadline", rename_all = "snake_case")]
pub enum Deadline {
    At { seconds: u64 },
    AfterUtterances { count: u64 },
    /// No deadline; the hard cap only guarantees termination.
    Open { hard_cap_seconds: u64 },
}

pub fn duration_deadline(config: &TournamentConfig) -> Deadline {
    match config.duration_policy {
        DurationPolicy::Timed { seconds } => Deadline::At { seconds },
        DurationPolicy::MessageBudget { count } => Deadline::AfterUtterances { count },
        DurationPolicy::OpenEnded { hard_cap_seconds } => Deadline::Open { hard_cap_seconds },
    }
}

/// Who or what sets the topic at a given moment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicDirective {
    Topic(String),
    Chooser(String),
}

/// Topic in force at `virtual_time`. Intervals are half-open, so at an
/// exact boundary the later topic (or the second half) applies.
pub fn active_topic(
    config: &TournamentConfig,
    virtual_time: u64,
    total_duration: u64,
    chooser_order: &[String; 2],
) -> Result<TopicDirective, SessionError> {
    match &config.topic_policy {
        TopicPolicy::Unrestricted => Err(SessionError::PolicyMismatch),
        TopicPolicy::ExternalSchedule { interval_seconds, topics } => {
            let idx = (virtual_time / interval_seconds) as usize % topics.len();
            Ok(TopicDirective::Topic(topics[idx].clone()))
        }
        TopicPolicy::HalfSplit => {
            let second = virtual_time.saturating_mul(2) >= total_duration;
            Ok(TopicDirective::Chooser(chooser_order[usize::from(second)].clone()))
        }
    }
}

/// Which half of the conversation is running (1 or 2).
///
/// Under a message budget of k the second half starts after ceil(k/2)
/// utterances; otherwise it starts at half the (capped) duration.
pub fn conversation_half(config: &TournamentConfig, virtual_time: u64, utterances: u64) -> u8 {
    let second = match duration_deadline(config) {
        Deadline::At { seconds } => virtual_time.saturating_mul(2) >= seconds,
        Deadline::AfterUtterances { count } => utterances >= count.div_ceil(2),
        Deadline::Open { hard_cap_seconds } => virtual_time.saturating_mul(2) >= hard_cap_seconds,
    };
    if second {
        2
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub plan: SessionPlan,
    pub roster: SessionRoster,
    pub phase: Phase,
    pub transcript: Vec<SessionEvent>,
    pub verdicts: BTreeMap<String, Claim>,
    pub utterances: u64,
}

impl SessionState {
    pub fn new(plan: SessionPlan, roster: SessionRoster) -> Self {
        SessionState {
            plan,
            roster,
            phase: Phase::AwaitingStart,
            transcript: Vec::new(),
            verdicts: BTreeMap::new(),
            utterances: 0,
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.transcript.len() as u64
    }

    pub fn last_time(&self) -> u64 {
        self.transcript.last().map_or(0, |e| e.virtual_time)
    }

    pub fn format(&self) -> Format {
        self.plan.format
    }

    /// Whether the duration policy is exhausted at `now`, so the driver
    /// should append `Expired`.
    pub fn expiry_due(&self, config: &TournamentConfig, now: u64) -> bool {
        if !matches!(self.phase, Phase::Conversing { .. }) {
            return false;
        }
        match duration_deadline(config) {
            Deadline::At { seconds } => now >= seconds,
            Deadline::AfterUtterances { count } => self.utterances >= count,
            Deadline::Open { hard_cap_seconds } => now >= hard_cap_seconds,
        }
    }

    pub fn all_verdicts_in(&self) -> bool {
        self.roster.judges().iter().all(|j| self.verdicts.contains_key(j))
    }

    pub fn pending_judges(&self) -> BTreeSet<String> {
        self.roster
            .judges()
            .into_iter()
            .filter(|j| !self.verdicts.contains_key(j))
            .collect()
    }

    /// Build the next event in sequence and apply it.
    pub fn push(
        &mut self,
        kind: EventKind,
        virtual_time: u64,
        config: &TournamentConfig,
    ) -> Result<&SessionEvent, SessionError> {
        let event = SessionEvent { seq: self.next_seq(), virtual_time, kind };
        self.apply(event, config)?;
        Ok(self.transcript.last().expect("event just appended"))
    }

    /// Apply one event in place. On error the state is left untouched.
    pub fn apply(&mut self, event: SessionEvent, config: &TournamentConfig) -> Result<(), SessionError> {
        let expected = self.next_seq();
        if event.seq != expected {
            return Err(SessionError::OutOfOrderEvent { expected, got: event.seq });
        }
        if event.virtual_time < self.last_time() {
            return Err(SessionError::TimeWentBackwards { last: self.last_time(), got: event.virtual_time });
        }
        let t = event.virtual_time;
        let name = event.kind.name();
        let illegal = |phase: &Phase, reason: &'static str| SessionError::IllegalInPhase {
            event: name,
            phase: phase.to_string(),
            reason,
        };

        let next_phase = match (&self.phase, &event.kind) {
            (Phase::Closed | Phase::Voided, _) => return Err(illegal(&self.phase, "session is over")),
            (_, EventKind::Voided { .. }) => Phase::Voided,
            (Phase::AwaitingStart, EventKind::Started) => Phase::Conversing { topic: None, half: 1 },
            (Phase::AwaitingStart, _) => return Err(illegal(&self.phase, "session not started")),
            (_, EventKind::Started) => return Err(illegal(&self.phase, "session already started")),

            (Phase::Conversing { half, .. }, EventKind::TopicSet { topic, chooser }) => {
                self.check_topic(config, t, topic, chooser.as_deref())?;
                Phase::Conversing { topic: Some(topic.clone()), half: *half }
            }
            (_, EventKind::TopicSet { .. }) => return Err(illegal(&self.phase, "topics change only while conversing")),

            (Phase::Conversing { .. }, EventKind::Utterance { author, .. }) => {
                if !self.roster.contains(author) {
                    return Err(SessionError::UnknownAuthor(author.clone()));
                }
                if self.expiry_due(config, t) {
                    return Err(illegal(&self.phase, "duration exhausted"));
                }
                if self.all_verdicts_in() {
                    return Err(illegal(&self.phase, "all verdicts submitted"));
                }
                self.phase.clone()
            }
            (_, EventKind::Utterance { .. }) => return Err(illegal(&self.phase, "conversation has ended")),

            (Phase::Conversing { .. }, EventKind::VerdictSubmitted { judge, claim }) => {
                if !matches!(config.duration_policy, DurationPolicy::OpenEnded { .. }) {
                    return Err(illegal(&self.phase, "verdicts open after expiry"));
                }
                self.check_verdict(judge, claim)?;
                self.phase.clone()
            }
            (Phase::AwaitingVerdicts { pending }, EventKind::VerdictSubmitted { judge, claim }) => {
                self.check_verdict(judge, claim)?;
                let mut pending = pending.clone();
                pending.remove(judge);
                Phase::AwaitingVerdicts { pending }
            }

            (Phase::Conversing { .. }, EventKind::Expired) => {
                if !self.expiry_due(config, t) {
                    return Err(illegal(&self.phase, "duration not yet exhausted"));
                }
                Phase::AwaitingVerdicts { pending: self.pending_judges() }
            }
            (_, EventKind::Expired) => return Err(illegal(&self.phase, "already expired")),

            (Phase::Conversing { .. } | Phase::AwaitingVerdicts { .. }, EventKind::Closed) => {
                if !self.all_verdicts_in() {
                    return Err(illegal(&self.phase, "verdicts outstanding"));
                }
                Phase::Closed
            }
        };

        match &event.kind {
            EventKind::Utterance { .. } => self.utterances += 1,
            EventKind::VerdictSubmitted { judge, claim } => {
                self.verdicts.insert(judge.clone(), claim.clone());
            }
            _ => {}
        }
        self.phase = match next_phase {
            Phase::Conversing { topic, .. } => Phase::Conversing {
                topic,
                half: conversation_half(config, t, self.utterances),
            },
            other => other,
        };
        self.transcript.push(event);
        Ok(())
    }

    fn check_topic(
        &self,
        config: &TournamentConfig,
        t: u64,
        topic: &str,
        chooser: Option<&str>,
    ) -> Result<(), SessionError> {
        match &config.topic_policy {
            TopicPolicy::Unrestricted => Err(SessionError::PolicyMismatch),
            TopicPolicy::ExternalSchedule { .. } => {
                if let Some(c) = chooser {
                    return Err(SessionError::NotTopicChooser(c.to_string()));
                }
                match active_topic(config, t, 0, &self.roster.players)? {
                    TopicDirective::Topic(expected) if expected == topic => Ok(()),
                    TopicDirective::Topic(expected) => {
                        Err(SessionError::TopicMismatch { expected, got: topic.to_string() })
                    }
                    TopicDirective::Chooser(_) => unreachable!("external schedule yields topics"),
                }
            }
            TopicPolicy::HalfSplit => {
                let Some(c) = chooser else {
                    return Err(SessionError::NotTopicChooser(String::new()));
                };
                if !self.roster.players.iter().any(|p| p == c) {
                    return Err(SessionError::UnknownAuthor(c.to_string()));
                }
                let half = conversation_half(config, t, self.utterances);
                if self.roster.players[usize::from(half - 1)] != c {
                    return Err(SessionError::NotTopicChooser(c.to_string()));
                }
                Ok(())
            }
        }
    }

    fn check_verdict(&self, judge: &str, claim: &Claim) -> Result<(), SessionError> {
        if !self.roster.contains(judge) {
            return Err(SessionError::UnknownAuthor(judge.to_string()));
        }
        if !self.roster.judges().iter().any(|j| j == judge) {
            return Err(SessionError::NotAJudge(judge.to_string()));
        }
        if self.verdicts.contains_key(judge) {
            return Err(SessionError::DuplicateVerdict(judge.to_string()));
        }
        match (self.plan.format, claim) {
            (Format::OneToOne, Claim::Label { target, .. }) => {
                let partner = self.roster.players.iter().find(|p| *p != judge);
                if partner.map(String::as_str) != Some(target.as_str()) {
                    return Err(SessionError::InvalidClaim(format!("{judge} must label its partner, not {target}")));
                }
            }
            (Format::OneToTwo, Claim::PickHuman { human }) => {
                if !self.roster.players.iter().any(|p| p == human) {
                    return Err(SessionError::InvalidClaim(format!("{human} is not a player in this session")));
                }
            }
            (Format::OneToOne, _) => return Err(SessionError::InvalidClaim("one-to-one claims are labels".into())),
            (Format::OneToTwo, _) => {
                return Err(SessionError::InvalidClaim("one-to-two claims pick the human".into()))
            }
        }
        Ok(())
    }
}

/// Pure successor function: consume a state and one event.
pub fn apply_event(
    mut state: SessionState,
    event: SessionEvent,
    config: &TournamentConfig,
) -> Result<SessionState, SessionError> {
    state.apply(event, config)?;
    Ok(state)
}

/// Fold a whole event list from a fresh state. On failure, returns the
/// index of the rejected event with the error.
pub fn fold_events(
    plan: SessionPlan,
    roster: SessionRoster,
    events: impl IntoIterator<Item = SessionEvent>,
    config: &TournamentConfig,
) -> Result<SessionState, (usize, SessionError)> {
    let mut state = SessionState::new(plan, roster);
    for (i, event) in events.into_iter().enumerate() {
        state.apply(event, config).map_err(|e| (i, e))?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ParticipantId;
    use crate::scheduler::SessionId;

    fn plan(format: Format) -> (SessionPlan, SessionRoster) {
        let plan = SessionPlan {
            session_id: SessionId::from("s"),
            format,
            judge: (format == Format::OneToTwo).then(|| ParticipantId::from("j")),
            players: ["a".into(), "b".into()],
            seed: 0,
        };
        let roster = SessionRoster {
            players: ["A".into(), "B".into()],
            judge: (format == Format::OneToTwo).then(|| "J".to_string()),
        };
        (plan, roster)
    }

    fn timed(seconds: u64) -> TournamentConfig {
        let mut c = TournamentConfig::strict(Format::OneToOne);
        c.duration_policy = DurationPolicy::Timed { seconds };
        c
    }

    fn say(author: &str) -> EventKind {
        EventKind::Utterance { author: author.into(), text: "hello".into() }
    }

    fn label(judge: &str, target: &str, asserted: Kind) -> EventKind {
        EventKind::VerdictSubmitted {
            judge: judge.into(),
            claim: Claim::Label { target: target.into(), asserted },
        }
    }

    #[test]
    fn one_to_one_happy_path() {
        let c = timed(300);
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        s.push(say("A"), 10, &c).unwrap();
        s.push(say("B"), 20, &c).unwrap();
        assert!(!s.expiry_due(&c, 299));
        s.push(EventKind::Expired, 300, &c).unwrap();
        s.push(label("A", "B", Kind::Human), 301, &c).unwrap();
        s.push(label("B", "A", Kind::Machine), 302, &c).unwrap();
        s.push(EventKind::Closed, 302, &c).unwrap();
        assert_eq!(s.phase, Phase::Closed);
        assert_eq!(s.verdicts.len(), 2);
    }

    #[test]
    fn utterance_after_expiry_is_illegal() {
        let c = timed(300);
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        s.push(EventKind::Expired, 300, &c).unwrap();
        let err = s.push(say("A"), 301, &c).unwrap_err();
        assert!(matches!(err, SessionError::IllegalInPhase { event: "utterance", .. }));
        // Also illegal when the clock has passed the deadline without an Expired event.
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        assert!(matches!(s.push(say("A"), 300, &c), Err(SessionError::IllegalInPhase { .. })));
    }

    #[test]
    fn open_ended_verdict_during_conversation() {
        let mut c = timed(1);
        c.duration_policy = DurationPolicy::OpenEnded { hard_cap_seconds: 14_400 };
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        s.push(say("A"), 5, &c).unwrap();
        s.push(label("A", "B", Kind::Human), 6, &c).unwrap();
        assert!(matches!(s.phase, Phase::Conversing { .. }));
        assert_eq!(s.pending_judges(), BTreeSet::from(["B".to_string()]));
        s.push(say("B"), 7, &c).unwrap();
        s.push(label("B", "A", Kind::Human), 8, &c).unwrap();
        s.push(EventKind::Closed, 8, &c).unwrap();
        assert_eq!(s.phase, Phase::Closed);
    }

    #[test]
    fn verdict_while_conversing_needs_open_policy() {
        let c = timed(300);
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        assert!(matches!(
            s.push(label("A", "B", Kind::Human), 1, &c),
            Err(SessionError::IllegalInPhase { .. })
        ));
    }

    #[test]
    fn rejects_gaps_duplicates_and_strangers() {
        let c = timed(300);
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        let gap = SessionEvent { seq: 5, virtual_time: 1, kind: say("A") };
        assert_eq!(s.apply(gap, &c), Err(SessionError::OutOfOrderEvent { expected: 1, got: 5 }));
        assert_eq!(s.push(say("Z"), 1, &c).unwrap_err(), SessionError::UnknownAuthor("Z".into()));
        s.push(say("A"), 10, &c).unwrap();
        assert!(matches!(s.push(say("A"), 9, &c), Err(SessionError::TimeWentBackwards { .. })));
        s.push(EventKind::Expired, 300, &c).unwrap();
        s.push(label("A", "B", Kind::Human), 301, &c).unwrap();
        assert_eq!(
            s.push(label("A", "B", Kind::Machine), 302, &c).unwrap_err(),
            SessionError::DuplicateVerdict("A".into())
        );
        assert!(matches!(s.push(label("B", "B", Kind::Human), 302, &c), Err(SessionError::InvalidClaim(_))));
        assert!(matches!(s.push(EventKind::Closed, 302, &c), Err(SessionError::IllegalInPhase { .. })));
        // A failed apply leaves the state untouched.
        assert_eq!(s.transcript.len(), 4);
    }

    #[test]
    fn one_to_two_needs_one_judge_verdict() {
        let mut c = timed(300);
        c.format = Format::OneToTwo;
        let (p, r) = plan(Format::OneToTwo);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        s.push(say("J"), 1, &c).unwrap();
        s.push(say("A"), 2, &c).unwrap();
        s.push(EventKind::Expired, 300, &c).unwrap();
        let player_verdict = EventKind::VerdictSubmitted {
            judge: "A".into(),
            claim: Claim::PickHuman { human: "B".into() },
        };
        assert_eq!(s.push(player_verdict, 301, &c).unwrap_err(), SessionError::NotAJudge("A".into()));
        let bad = EventKind::VerdictSubmitted { judge: "J".into(), claim: Claim::PickHuman { human: "J".into() } };
        assert!(matches!(s.push(bad, 301, &c), Err(SessionError::InvalidClaim(_))));
        let ok = EventKind::VerdictSubmitted { judge: "J".into(), claim: Claim::PickHuman { human: "B".into() } };
        s.push(ok, 301, &c).unwrap();
        s.push(EventKind::Closed, 301, &c).unwrap();
        assert_eq!(s.phase, Phase::Closed);
    }

    #[test]
    fn message_budget_expiry() {
        let mut c = timed(1);
        c.duration_policy = DurationPolicy::MessageBudget { count: 40 };
        assert_eq!(duration_deadline(&c), Deadline::AfterUtterances { count: 40 });
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        for i in 0..40 {
            assert!(!s.expiry_due(&c, i));
            s.push(say(if i % 2 == 0 { "A" } else { "B" }), i, &c).unwrap();
        }
        assert!(s.expiry_due(&c, 40));
        assert!(matches!(s.push(say("A"), 40, &c), Err(SessionError::IllegalInPhase { .. })));
        s.push(EventKind::Expired, 40, &c).unwrap();
    }

    #[test]
    fn deadlines_for_presets() {
        assert_eq!(
            duration_deadline(&TournamentConfig::strict(Format::OneToOne)),
            Deadline::At { seconds: 1800 }
        );
        assert_eq!(
            duration_deadline(&TournamentConfig::classic(Format::OneToOne)),
            Deadline::At { seconds: 300 }
        );
        let mut c = timed(1);
        c.duration_policy = DurationPolicy::OpenEnded { hard_cap_seconds: 14_400 };
        assert_eq!(duration_deadline(&c), Deadline::Open { hard_cap_seconds: 14_400 });
    }

    #[test]
    fn external_schedule_topics() {
        let mut c = timed(1800);
        c.topic_policy = TopicPolicy::ExternalSchedule {
            interval_seconds: 300,
            topics: vec!["A".into(), "B".into(), "C".into()],
        };
        let order = ["P1".to_string(), "P2".to_string()];
        assert_eq!(active_topic(&c, 650, 1800, &order).unwrap(), TopicDirective::Topic("C".into()));
        assert_eq!(active_topic(&c, 299, 1800, &order).unwrap(), TopicDirective::Topic("A".into()));
        assert_eq!(active_topic(&c, 300, 1800, &order).unwrap(), TopicDirective::Topic("B".into()));
        assert_eq!(active_topic(&c, 900, 1800, &order).unwrap(), TopicDirective::Topic("A".into()));

        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        s.push(EventKind::TopicSet { topic: "A".into(), chooser: None }, 0, &c).unwrap();
        assert!(matches!(
            s.push(EventKind::TopicSet { topic: "A".into(), chooser: None }, 300, &c),
            Err(SessionError::TopicMismatch { .. })
        ));
        s.push(EventKind::TopicSet { topic: "B".into(), chooser: None }, 300, &c).unwrap();
        assert_eq!(s.phase, Phase::Conversing { topic: Some("B".into()), half: 1 });
    }

    #[test]
    fn half_split_topics() {
        let mut c = timed(1800);
        c.topic_policy = TopicPolicy::HalfSplit;
        let order = ["P1".to_string(), "P2".to_string()];
        assert_eq!(active_topic(&c, 0, 1800, &order).unwrap(), TopicDirective::Chooser("P1".into()));
        assert_eq!(active_topic(&c, 899, 1800, &order).unwrap(), TopicDirective::Chooser("P1".into()));
        assert_eq!(active_topic(&c, 900, 1800, &order).unwrap(), TopicDirective::Chooser("P2".into()));

        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        let by = |who: &str| EventKind::TopicSet { topic: "chess".into(), chooser: Some(who.into()) };
        assert_eq!(s.push(by("B"), 1, &c).unwrap_err(), SessionError::NotTopicChooser("B".into()));
        s.push(by("A"), 1, &c).unwrap();
        assert_eq!(s.push(by("A"), 900, &c).unwrap_err(), SessionError::NotTopicChooser("A".into()));
        s.push(by("B"), 900, &c).unwrap();
        assert_eq!(s.phase, Phase::Conversing { topic: Some("chess".into()), half: 2 });
    }

    #[test]
    fn half_split_with_budget_switches_after_ceil_half() {
        let mut c = timed(1);
        c.duration_policy = DurationPolicy::MessageBudget { count: 5 };
        assert_eq!(conversation_half(&c, 0, 2), 1);
        assert_eq!(conversation_half(&c, 0, 3), 2);
    }

    #[test]
    fn unrestricted_topic_is_policy_mismatch() {
        let c = timed(300);
        let order = ["P1".to_string(), "P2".to_string()];
        assert_eq!(active_topic(&c, 0, 300, &order), Err(SessionError::PolicyMismatch));
    }

    #[test]
    fn voided_is_terminal() {
        let c = timed(300);
        let (p, r) = plan(Format::OneToOne);
        let mut s = SessionState::new(p, r);
        s.push(EventKind::Started, 0, &c).unwrap();
        s.push(EventKind::Voided { reason: "disconnect".into() }, 3, &c).unwrap();
        assert_eq!(s.phase, Phase::Voided);
        assert!(s.push(say("A"), 4, &c).is_err());
    }

    #[test]
    fn event_json_shape() {
        let e = SessionEvent { seq: 3, virtual_time: 12, kind: say("A") };
        let line = crate::canonical::to_canonical_json(&e).unwrap();
        assert_eq!(line, r#"{"author":"A","kind":"utterance","seq":3,"text":"hello","virtual_time":12}"#);
        let back: SessionEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, e);
    }
}
