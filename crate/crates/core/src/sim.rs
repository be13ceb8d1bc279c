//! Synthetic agents and Monte Carlo tournaments.
//!
//! Conversations are scripted stubs; only verdict behaviour is modelled,
//! since that is all the scoring consumes. Every random draw comes from a
//! substream keyed by (replication seed, session id, judge id), so results
//! do not depend on execution order or on which other sessions exist.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::derive_seed;
use crate::domain::{BRule, DurationPolicy, Kind, Participant, ParticipantId, TopicPolicy, TournamentConfig};
use crate::eventlog::{log_hash, reports_digest, LogWriter, Record};
use crate::fraction::Fraction;
use crate::scheduler::SessionPlan;
use crate::scoring::{
    evaluate_classic_turing, evaluate_meta, humanness_rate, BaselineReport, JudgmentMatrix, PassReport, ScoringError,
    CLASSIC_THRESHOLD,
};
use crate::session::{active_topic, Claim, EventKind, SessionError, SessionRoster, SessionState, TopicDirective};
use crate::tournament::{SetupError, TournamentSetup};
use crate::winograd::{AnswerSheet, Bank, SchemaPair, SchemaQuestion};

/// Placeholder utterances per session when the duration is time-based.
pub const STUB_UTTERANCES: u64 = 4;
/// Virtual seconds between stub utterances under a message budget.
pub const STUB_PACE_SECONDS: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    TruthfulHuman,
    DeceptiveChatbot,
    /// Runs a fixed battery (say, Winograd questions) at every partner.
    MechanicalTester,
    StrongMachine,
}

/// How a machine's deception fades as conversations get longer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "decay", rename_all = "snake_case")]
pub enum Decay {
    #[default]
    Constant,
    /// Deception halves every `half_life_seconds` of conversation.
    Exponential { half_life_seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub participant: Participant,
    pub archetype: Archetype,
    /// Probability a judge takes this agent for human; 1 for humans.
    pub deception: f64,
    /// Probability of labelling a true human Human.
    pub detect_human: f64,
    /// Labels a machine Machine with probability (1 - d_partner) * skill.
    pub skill: f64,
    #[serde(default)]
    pub decay: Decay,
}

impl AgentProfile {
    pub fn truthful_human(id: &str) -> Self {
        AgentProfile {
            participant: Participant::human(id),
            archetype: Archetype::TruthfulHuman,
            deception: 1.0,
            detect_human: 1.0,
            skill: 1.0,
            decay: Decay::Constant,
        }
    }

    pub fn deceptive_chatbot(id: &str, deception: f64, skill: f64) -> Self {
        AgentProfile {
            participant: Participant::machine(id),
            archetype: Archetype::DeceptiveChatbot,
            deception,
            detect_human: 1.0,
            skill,
            decay: Decay::Constant,
        }
    }

    /// Never mistaken for human, but applies its test perfectly.
    pub fn mechanical_tester(id: &str) -> Self {
        AgentProfile { archetype: Archetype::MechanicalTester, ..Self::deceptive_chatbot(id, 0.0, 1.0) }
    }

    pub fn strong_machine(id: &str) -> Self {
        AgentProfile { archetype: Archetype::StrongMachine, ..Self::deceptive_chatbot(id, 1.0, 1.0) }
    }

    pub fn with_detect_human(mut self, a_h: f64) -> Self {
        self.detect_human = a_h;
        self
    }

    pub fn with_decay(mut self, decay: Decay) -> Self {
        self.decay = decay;
        self
    }

    pub fn id(&self) -> &ParticipantId {
        &self.participant.id
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidProfile(self.participant.id.clone(), what.to_string()));
        for (name, v) in [("deception", self.deception), ("detect_human", self.detect_human), ("skill", self.skill)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if let Decay::Exponential { half_life_seconds } = self.decay {
            if !(half_life_seconds > 0.0 && half_life_seconds.is_finite()) {
                return bad("decay half-life must be positive");
            }
        }
        let human_archetype = self.archetype == Archetype::TruthfulHuman;
        if human_archetype != (self.participant.kind == Kind::Human) {
            return bad("archetype does not match participant kind");
        }
        Ok(())
    }

    /// Deception after `duration` seconds of conversation.
    pub fn effective_deception(&self, duration: u64) -> f64 {
        match self.decay {
            Decay::Constant => self.deception,
            Decay::Exponential { half_life_seconds } => self.deception * 0.5f64.powf(duration as f64 / half_life_seconds),
        }
    }

    /// Probability that this judge labels `subject` Human.
    pub fn p_label_human(&self, subject: &AgentProfile, duration: u64) -> f64 {
        match subject.participant.kind {
            Kind::Human => self.detect_human,
            Kind::Machine => 1.0 - (1.0 - subject.effective_deception(duration)) * self.skill,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("profile {0}: {1}")]
    InvalidProfile(ParticipantId, String),
    #[error("no profile for participant {0}")]
    MissingProfile(ParticipantId),
    #[error("replications must be at least 1")]
    NoReplications,
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("scripted session {0} was rejected: {1}")]
    Script(String, SessionError),
    #[error("no machine passes the restricted rule in the base tournament")]
    NoBaselinePasser,
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub profiles: Vec<AgentProfile>,
    pub tournament: TournamentConfig,
    pub replications: u64,
    pub master_seed: u64,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let c: SimConfig = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.replications == 0 {
            return Err(SimError::NoReplications);
        }
        self.profiles.iter().try_for_each(AgentProfile::validate)
    }

    fn roster(&self) -> Vec<Participant> {
        self.profiles.iter().map(|p| p.participant.clone()).collect()
    }

    fn profile_map(&self) -> BTreeMap<&ParticipantId, &AgentProfile> {
        self.profiles.iter().map(|p| (p.id(), p)).collect()
    }
}

/// Seed of replication `index`, derived so replications are independent.
pub fn replication_seed(master_seed: u64, index: u64) -> u64 {
    derive_seed(master_seed, &format!("replication/{index}"))
}

/// Nominal conversation length that deception decay is measured against.
pub fn nominal_duration(config: &TournamentConfig) -> u64 {
    match config.duration_policy {
        DurationPolicy::Timed { seconds } => seconds,
        DurationPolicy::MessageBudget { count } => count * STUB_PACE_SECONDS,
        DurationPolicy::OpenEnded { hard_cap_seconds } => hard_cap_seconds,
    }
}

/// Draw one judge's claim about the session's subject(s).
///
/// One subject: a label. Two subjects: independent Bernoulli impressions
/// of both, the judge picks the one that came out Human, a coin decides
/// ties. The substream is keyed by the judge's id within the session.
pub fn sample_verdict(
    judge: &AgentProfile,
    subjects: &[(&AgentProfile, &str)],
    duration: u64,
    session_seed: u64,
) -> Claim {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(session_seed, judge.id().as_str()));
    match subjects {
        [(s, alias)] => {
            let human = rng.random_bool(judge.p_label_human(s, duration));
            Claim::Label { target: alias.to_string(), asserted: if human { Kind::Human } else { Kind::Machine } }
        }
        [(a, alias_a), (b, alias_b)] => {
            let ia = rng.random_bool(judge.p_label_human(a, duration));
            let ib = rng.random_bool(judge.p_label_human(b, duration));
            let first = if ia == ib { rng.random_bool(0.5) } else { ia };
            Claim::PickHuman { human: if first { alias_a } else { alias_b }.to_string() }
        }
        _ => panic!("a verdict concerns one or two subjects"),
    }
}

fn topic_event(config: &TournamentConfig, roster: &SessionRoster, t: u64) -> Option<EventKind> {
    match &config.topic_policy {
        TopicPolicy::Unrestricted => None,
        TopicPolicy::ExternalSchedule { .. } => match active_topic(config, t, 0, &roster.players) {
            Ok(TopicDirective::Topic(topic)) => Some(EventKind::TopicSet { topic, chooser: None }),
            _ => None,
        },
        TopicPolicy::HalfSplit => Some(EventKind::TopicSet {
            topic: "open topic".into(),
            chooser: Some(roster.players[0].clone()),
        }),
    }
}

/// Play one session as Started, a topic if the policy wants one, stub
/// utterances, expiry, verdicts, Closed. Open-ended sessions skip expiry:
/// judges decide while the conversation is still open.
fn script_session(
    config: &TournamentConfig,
    plan: &SessionPlan,
    roster: &SessionRoster,
    profiles: &BTreeMap<&ParticipantId, &AgentProfile>,
    mut sink: impl FnMut(&SessionState),
) -> Result<SessionState, SimError> {
    let err = |e| SimError::Script(plan.session_id.to_string(), e);
    let profile = |id: &ParticipantId| profiles.get(id).copied().ok_or_else(|| SimError::MissingProfile(id.clone()));
    let mut s = SessionState::new(plan.clone(), roster.clone());
    let mut push = |s: &mut SessionState, kind: EventKind, t: u64| -> Result<(), SimError> {
        s.push(kind, t, config).map_err(err)?;
        sink(s);
        Ok(())
    };
    push(&mut s, EventKind::Started, 0)?;
    if let Some(topic) = topic_event(config, roster, 0) {
        push(&mut s, topic, 0)?;
    }
    let speakers = roster.all();
    let (count, time_of): (u64, Box<dyn Fn(u64) -> u64>) = match config.duration_policy {
        DurationPolicy::MessageBudget { count } => (count, Box::new(|i| i * STUB_PACE_SECONDS)),
        DurationPolicy::Timed { seconds: end } | DurationPolicy::OpenEnded { hard_cap_seconds: end } => {
            (STUB_UTTERANCES, Box::new(move |i| i * (end - 1) / STUB_UTTERANCES))
        }
    };
    for i in 0..count {
        let author = speakers[(i as usize) % speakers.len()].clone();
        push(&mut s, EventKind::Utterance { author, text: format!("[stub utterance {}]", i + 1) }, time_of(i))?;
    }
    let mut t = s.last_time();
    if !matches!(config.duration_policy, DurationPolicy::OpenEnded { .. }) {
        if let DurationPolicy::Timed { seconds } = config.duration_policy {
            t = seconds;
        }
        push(&mut s, EventKind::Expired, t)?;
    }
    let duration = nominal_duration(config);
    let alias_of = |id: &ParticipantId| -> &str {
        let i = plan.players.iter().position(|p| p == id).expect("player in plan");
        roster.players[i].as_str()
    };
    for judge_id in plan.judges() {
        let judge = profile(&judge_id)?;
        let subjects: Vec<(&AgentProfile, &str)> = plan
            .players
            .iter()
            .filter(|p| **p != judge_id)
            .map(|p| Ok((profile(p)?, alias_of(p))))
            .collect::<Result<_, SimError>>()?;
        let claim = sample_verdict(judge, &subjects, duration, plan.seed);
        let judge_alias = match &plan.judge {
            Some(_) => roster.judge.clone().expect("one-to-two roster has a judge"),
            None => alias_of(&judge_id).to_string(),
        };
        push(&mut s, EventKind::VerdictSubmitted { judge: judge_alias, claim }, t)?;
    }
    push(&mut s, EventKind::Closed, t)?;
    Ok(s)
}

/// Scored outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_hash: Option<String>,
    pub reports: Vec<PassReport>,
    pub classic: Vec<BaselineReport>,
}

struct Run {
    matrix: JudgmentMatrix,
    result: ReplicationResult,
    log: Option<Vec<u8>>,
}

fn run_replication(config: &SimConfig, index: u64, with_log: bool) -> Result<Run, SimError> {
    let seed = replication_seed(config.master_seed, index);
    let setup = TournamentSetup::prepare(&config.tournament, &config.roster(), seed)?;
    let profiles = config.profile_map();
    let mut log = with_log.then(|| LogWriter::new(Vec::new()));
    if let Some(w) = log.as_mut() {
        setup.write_preamble(w, Some(index)).expect("writing to memory");
    }
    let mut states = Vec::with_capacity(setup.sessions.len());
    for (plan, roster) in &setup.sessions {
        let state = script_session(&setup.config, plan, roster, &profiles, |s| {
            if let Some(w) = log.as_mut() {
                let event = s.transcript.last().expect("event just pushed").clone();
                w.append(&Record::Event { session_id: plan.session_id.clone(), event }).expect("writing to memory");
            }
        })?;
        states.push(state);
    }
    let matrix = JudgmentMatrix::from_sessions(setup.config.format, setup.kinds(), &states)?;
    let reports = evaluate_meta(&matrix, &setup.config)?;
    let classic = evaluate_classic_turing(&matrix, CLASSIC_THRESHOLD)?;
    let log = log.map(|mut w| {
        w.append(&Record::Scored { reports_digest: reports_digest(&reports) }).expect("writing to memory");
        w.into_inner()
    });
    let result = ReplicationResult { index, seed, log_hash: log.as_deref().map(log_hash), reports, classic };
    Ok(Run { matrix, result, log })
}

/// One replication with its full event log.
pub fn simulate_replication(config: &SimConfig, index: u64) -> Result<(Vec<u8>, ReplicationResult), SimError> {
    config.validate()?;
    let run = run_replication(config, index, true)?;
    Ok((run.log.expect("log requested"), run.result))
}

/// Every replication, each with its event log, in index order.
pub fn run_tournament_sim(config: &SimConfig) -> Result<Vec<(Vec<u8>, ReplicationResult)>, SimError> {
    config.validate()?;
    (0..config.replications)
        .into_par_iter()
        .map(|k| run_replication(config, k, true).map(|r| (r.log.expect("log requested"), r.result)))
        .collect()
}

/// Every replication, scored but without materialising logs. For large
/// Monte Carlo runs.
pub fn run_tournament_stats(config: &SimConfig) -> Result<Vec<ReplicationResult>, SimError> {
    config.validate()?;
    (0..config.replications)
        .into_par_iter()
        .map(|k| run_replication(config, k, false).map(|r| r.result))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineStats {
    pub mean_humanness: f64,
    pub meta_pass_rate: f64,
    pub classic_pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub replications: u64,
    pub machines: BTreeMap<ParticipantId, MachineStats>,
}

pub fn summarize(results: &[ReplicationResult]) -> SimSummary {
    let mut acc: BTreeMap<ParticipantId, (f64, u64, u64)> = BTreeMap::new();
    for r in results {
        for rep in &r.reports {
            let e = acc.entry(rep.machine_id.clone()).or_default();
            e.0 += rep.humanness_rate.to_f64();
            e.1 += u64::from(rep.overall);
        }
        for c in &r.classic {
            acc.entry(c.machine_id.clone()).or_default().2 += u64::from(c.passed);
        }
    }
    let n = results.len().max(1) as f64;
    SimSummary {
        replications: results.len() as u64,
        machines: acc
            .into_iter()
            .map(|(id, (h, meta, classic))| {
                let stats = MachineStats {
                    mean_humanness: h / n,
                    meta_pass_rate: meta as f64 / n,
                    classic_pass_rate: classic as f64 / n,
                };
                (id, stats)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRow {
    pub replication: u64,
    pub machine_id: ParticipantId,
    pub naive_before: bool,
    pub naive_after: bool,
    pub restricted_before: bool,
    pub restricted_after: bool,
}

impl FlipRow {
    pub fn naive_flipped(&self) -> bool {
        self.naive_before != self.naive_after
    }

    pub fn restricted_flipped(&self) -> bool {
        self.restricted_before != self.restricted_after
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added: Option<ParticipantId>,
    /// Humanness of the added machine, per replication.
    pub added_humanness: Vec<Fraction>,
    pub rows: Vec<FlipRow>,
    pub naive_flips: usize,
    pub restricted_flips: usize,
}

fn pass_map(matrix: &JudgmentMatrix, config: &TournamentConfig, rule: BRule) -> Result<BTreeMap<ParticipantId, bool>, SimError> {
    let c = TournamentConfig { b_rule: rule, ..config.clone() };
    Ok(evaluate_meta(matrix, &c)?.into_iter().map(|r| (r.machine_id, r.overall)).collect())
}

/// Rerun every replication with `addition` joined to the pool (a strong
/// machine by default when called through [`monotonicity_experiment`])
/// and compare pass status under the naive all-machines rule and the
/// restricted rule. `None` is the control: nothing is added.
///
/// Counts need not balance once a machine is added, so the experiment
/// runs with `allow_unequal` set.
pub fn monotonicity_with(base: &SimConfig, addition: Option<AgentProfile>) -> Result<MonotonicityReport, SimError> {
    base.validate()?;
    let mut before_cfg = base.clone();
    before_cfg.tournament.allow_unequal = true;
    let restricted = match base.tournament.b_rule {
        BRule::AllMachines => BRule::Accuracy,
        r => r,
    };
    let mut after_cfg = before_cfg.clone();
    if let Some(a) = &addition {
        a.validate()?;
        after_cfg.profiles.push(a.clone());
    }
    let per_rep: Vec<(Vec<FlipRow>, Option<Fraction>)> = (0..base.replications)
        .into_par_iter()
        .map(|k| {
            let before = run_replication(&before_cfg, k, false)?.matrix;
            let after = run_replication(&after_cfg, k, false)?.matrix;
            let cfg = &before_cfg.tournament;
            let nb = pass_map(&before, cfg, BRule::AllMachines)?;
            let na = pass_map(&after, cfg, BRule::AllMachines)?;
            let rb = pass_map(&before, cfg, restricted)?;
            let ra = pass_map(&after, cfg, restricted)?;
            let rows = rb
                .keys()
                .map(|m| FlipRow {
                    replication: k,
                    machine_id: m.clone(),
                    naive_before: nb[m],
                    naive_after: na[m],
                    restricted_before: rb[m],
                    restricted_after: ra[m],
                })
                .collect();
            let h = match &addition {
                Some(a) => Some(humanness_rate(&after, a.id())?),
                None => None,
            };
            Ok((rows, h))
        })
        .collect::<Result<_, SimError>>()?;
    let rows: Vec<FlipRow> = per_rep.iter().flat_map(|(r, _)| r.iter().cloned()).collect();
    if !rows.iter().any(|r| r.restricted_before) {
        return Err(SimError::NoBaselinePasser);
    }
    Ok(MonotonicityReport {
        added: addition.map(|a| a.participant.id),
        added_humanness: per_rep.iter().filter_map(|(_, h)| *h).collect(),
        naive_flips: rows.iter().filter(|r| r.naive_flipped()).count(),
        restricted_flips: rows.iter().filter(|r| r.restricted_flipped()).count(),
        rows,
    })
}

/// The standard experiment: add a strong machine (d = 1, skill = 1).
pub fn monotonicity_experiment(base: &SimConfig) -> Result<MonotonicityReport, SimError> {
    let mut id = "strong".to_string();
    while base.profiles.iter().any(|p| p.id().as_str() == id) {
        id.push('*');
    }
    monotonicity_with(base, Some(AgentProfile::strong_machine(&id)))
}

/// A valid bank of `pairs` pairs; the last `three_choice_pairs` offer a
/// third answer option.
pub fn synthetic_bank(pairs: usize, three_choice_pairs: usize) -> Bank {
    let question = |pid: &str, suffix: char, word: &str, alt: &str, k: usize, correct: usize, i: usize| SchemaQuestion {
        id: format!("{pid}{suffix}"),
        pair_id: pid.to_string(),
        sentence_with_question: format!("Crate {i} will not fit on shelf {i} because it is too {word}. What is too {word}?"),
        choices: ["the crate", "the shelf", "the floor"][..k].iter().map(|s| s.to_string()).collect(),
        correct_index: correct,
        special_word: word.into(),
        alternate_word: alt.into(),
        required_lexemes: Vec::new(),
    };
    let pairs = (0..pairs)
        .map(|i| {
            let pid = format!("syn{i}");
            let k = if i + three_choice_pairs >= pairs { 3 } else { 2 };
            SchemaPair {
                first: question(&pid, 'a', "wide", "narrow", k, 0, i),
                second: question(&pid, 'b', "narrow", "wide", k, 1, i),
                pair_id: pid,
            }
        })
        .collect();
    Bank { pairs }
}

/// A respondent that answers each question correctly with probability
/// `accuracy`, otherwise picks uniformly among the wrong choices.
pub fn simulate_answer_sheet(bank: &Bank, respondent: &str, bank_id: &str, accuracy: f64, seed: u64) -> AnswerSheet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let answers = bank
        .questions()
        .map(|q| {
            let pick = if rng.random_bool(accuracy) || q.choices.len() < 2 {
                q.correct_index
            } else {
                let wrong = rng.random_range(0..q.choices.len() - 1);
                if wrong >= q.correct_index {
                    wrong + 1
                } else {
                    wrong
                }
            };
            (q.id.clone(), pick)
        })
        .collect();
    AnswerSheet { respondent_id: respondent.into(), bank_id: bank_id.into(), answers }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WscSimSummary {
    pub accuracy: f64,
    pub replications: u64,
    pub passes: u64,
    pub pass_rate: f64,
    pub mean_score: f64,
}

/// How often a respondent of the given accuracy reaches `threshold`.
pub fn wsc_pass_frequency(bank: &Bank, accuracy: f64, threshold: Fraction, replications: u64, master_seed: u64) -> WscSimSummary {
    let scores: Vec<Fraction> = (0..replications)
        .into_par_iter()
        .map(|k| {
            let sheet = simulate_answer_sheet(bank, "r", "bank", accuracy, replication_seed(master_seed, k));
            crate::winograd::score_answer_sheet(&sheet, bank).expect("sheet built from the bank").accuracy
        })
        .collect();
    let passes = scores.iter().filter(|s| **s >= threshold).count() as u64;
    let n = replications.max(1) as f64;
    WscSimSummary {
        accuracy,
        replications,
        passes,
        pass_rate: passes as f64 / n,
        mean_score: scores.iter().map(Fraction::to_f64).sum::<f64>() / n,
    }
}
