//! Verdict aggregation and pass rules.
//!
//! A machine passes the meta test when (a) human judges take it for human
//! often enough and (b) it identifies the machines that humans themselves
//! recognise as machines (the set R). Machines outside R are never held
//! against a candidate, which keeps the rule monotone when stronger
//! machines join the pool.
//!
//! All rates are exact [`Fraction`]s; thresholds compare inclusively
//! (`rate >= theta`) and membership in R is strict (`rate < theta_r`).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BRule, Format, Kind, ParticipantId, TournamentConfig};
use crate::fraction::Fraction;
use crate::scheduler::SessionId;
use crate::session::{Claim, Phase, SessionState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "judgment", rename_all = "snake_case")]
pub enum Judgment {
    /// One-to-one: the judge labels its partner.
    Label { subject: ParticipantId, asserted: Kind },
    /// One-to-two: the judge names `picked` as the human of the pair.
    Pick { human: ParticipantId, machine: ParticipantId, picked: ParticipantId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub session_id: SessionId,
    pub judge: ParticipantId,
    pub judge_kind: Kind,
    pub judgment: Judgment,
}

impl VerdictRecord {
    pub fn subjects(&self) -> impl Iterator<Item = &ParticipantId> {
        let (first, second) = match &self.judgment {
            Judgment::Label { subject, .. } => (subject, None),
            Judgment::Pick { human, machine, .. } => (human, Some(machine)),
        };
        std::iter::once(first).chain(second)
    }

    /// Whether this judgment took `id` for human.
    pub fn claims_human(&self, id: &ParticipantId) -> bool {
        match &self.judgment {
            Judgment::Label { subject, asserted } => subject == id && *asserted == Kind::Human,
            Judgment::Pick { picked, .. } => picked == id,
        }
    }

    /// Whether the judgment matches ground truth.
    pub fn is_correct(&self, kinds: &BTreeMap<ParticipantId, Kind>) -> bool {
        match &self.judgment {
            Judgment::Label { subject, asserted } => kinds.get(subject) == Some(asserted),
            Judgment::Pick { human, picked, .. } => picked == human,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoringError {
    #[error("matrix format {found:?} does not match the requested evaluation ({expected:?})")]
    FormatMismatch { expected: Format, found: Format },
    #[error("machine {0} has no judgments from human judges")]
    NoHumanJudgments(ParticipantId),
    #[error("session {0} has incomplete verdicts")]
    IncompleteVerdicts(SessionId),
    #[error("machine {0} judged no pair containing a recognised machine")]
    NoRSessions(ParticipantId),
    #[error("judge {judge} has {have} sessions in group {group}, need {need}")]
    InsufficientJudgeSessions { judge: ParticipantId, group: &'static str, have: usize, need: usize },
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("invalid verdict record in session {0}: {1}")]
    InvalidRecord(SessionId, String),
}

/// Every verdict of a tournament, with ground truth attached to every id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JudgmentMatrix {
    pub format: Format,
    pub kinds: BTreeMap<ParticipantId, Kind>,
    pub records: Vec<VerdictRecord>,
    #[serde(skip)]
    by_judge: BTreeMap<ParticipantId, Vec<usize>>,
    #[serde(skip)]
    by_subject: BTreeMap<ParticipantId, Vec<usize>>,
}

impl JudgmentMatrix {
    /// Build and check a matrix. Every session must carry its full set of
    /// verdicts: two mutual labels (one-to-one) or one pick (one-to-two).
    pub fn new(
        format: Format,
        kinds: BTreeMap<ParticipantId, Kind>,
        records: Vec<VerdictRecord>,
    ) -> Result<Self, ScoringError> {
        let mut per_session: BTreeMap<&SessionId, Vec<&VerdictRecord>> = BTreeMap::new();
        for r in &records {
            let bad = |msg: &str| ScoringError::InvalidRecord(r.session_id.clone(), msg.to_string());
            let judge_kind = *kinds.get(&r.judge).ok_or_else(|| ScoringError::UnknownParticipant(r.judge.clone()))?;
            if judge_kind != r.judge_kind {
                return Err(bad("judge_kind disagrees with ground truth"));
            }
            for s in r.subjects() {
                if !kinds.contains_key(s) {
                    return Err(ScoringError::UnknownParticipant(s.clone()));
                }
                if *s == r.judge {
                    return Err(bad("judge cannot judge itself"));
                }
            }
            match (&r.judgment, format) {
                (Judgment::Label { .. }, Format::OneToOne) => {}
                (Judgment::Pick { human, machine, picked }, Format::OneToTwo) => {
                    if kinds[human] != Kind::Human || kinds[machine] != Kind::Machine {
                        return Err(bad("pair must be one human and one machine"));
                    }
                    if picked != human && picked != machine {
                        return Err(bad("picked participant is not in the pair"));
                    }
                }
                _ => {
                    return Err(ScoringError::FormatMismatch {
                        expected: format,
                        found: match format {
                            Format::OneToOne => Format::OneToTwo,
                            Format::OneToTwo => Format::OneToOne,
                        },
                    })
                }
            }
            per_session.entry(&r.session_id).or_default().push(r);
        }
        for (sid, rs) in &per_session {
            let complete = match format {
                Format::OneToOne => {
                    rs.len() == 2
                        && matches!(
                            (&rs[0].judgment, &rs[1].judgment),
                            (Judgment::Label { subject: a, .. }, Judgment::Label { subject: b, .. })
                                if *a == rs[1].judge && *b == rs[0].judge
                        )
                }
                Format::OneToTwo => rs.len() == 1,
            };
            if !complete {
                return Err(ScoringError::IncompleteVerdicts((*sid).clone()));
            }
        }
        let mut m = JudgmentMatrix { format, kinds, records, by_judge: BTreeMap::new(), by_subject: BTreeMap::new() };
        m.reindex();
        Ok(m)
    }

    fn reindex(&mut self) {
        fn push(index: &mut BTreeMap<ParticipantId, Vec<usize>>, id: &ParticipantId, i: usize) {
            match index.get_mut(id) {
                Some(v) => v.push(i),
                None => {
                    index.insert(id.clone(), vec![i]);
                }
            }
        }
        self.by_judge.clear();
        self.by_subject.clear();
        for (i, r) in self.records.iter().enumerate() {
            push(&mut self.by_judge, &r.judge, i);
            for s in r.subjects() {
                push(&mut self.by_subject, s, i);
            }
        }
    }

    /// Collect verdicts from finished sessions. Voided sessions are skipped;
    /// any other non-closed session is an error.
    pub fn from_sessions<'a>(
        format: Format,
        kinds: BTreeMap<ParticipantId, Kind>,
        sessions: impl IntoIterator<Item = &'a SessionState>,
    ) -> Result<Self, ScoringError> {
        let mut records = Vec::new();
        for s in sessions {
            match s.phase {
                Phase::Voided => continue,
                Phase::Closed => {}
                _ => return Err(ScoringError::IncompleteVerdicts(s.plan.session_id.clone())),
            }
            let sid = &s.plan.session_id;
            let id_of = |alias: &str| -> Result<ParticipantId, ScoringError> {
                if let Some(i) = s.roster.players.iter().position(|p| p == alias) {
                    return Ok(s.plan.players[i].clone());
                }
                match (&s.roster.judge, &s.plan.judge) {
                    (Some(ja), Some(jid)) if ja == alias => Ok(jid.clone()),
                    _ => Err(ScoringError::InvalidRecord(sid.clone(), format!("unknown alias {alias}"))),
                }
            };
            for (judge_alias, claim) in &s.verdicts {
                let judge = id_of(judge_alias)?;
                let judge_kind = *kinds.get(&judge).ok_or_else(|| ScoringError::UnknownParticipant(judge.clone()))?;
                let judgment = match claim {
                    Claim::Label { target, asserted } => Judgment::Label { subject: id_of(target)?, asserted: *asserted },
                    Claim::PickHuman { human } => {
                        let picked = id_of(human)?;
                        let (h, m) = match kinds.get(&s.plan.players[0]) {
                            Some(Kind::Human) => (s.plan.players[0].clone(), s.plan.players[1].clone()),
                            _ => (s.plan.players[1].clone(), s.plan.players[0].clone()),
                        };
                        Judgment::Pick { human: h, machine: m, picked }
                    }
                };
                records.push(VerdictRecord { session_id: sid.clone(), judge, judge_kind, judgment });
            }
        }
        JudgmentMatrix::new(format, kinds, records)
    }

    pub fn machines(&self) -> impl Iterator<Item = &ParticipantId> {
        self.kinds.iter().filter(|(_, k)| **k == Kind::Machine).map(|(id, _)| id)
    }

    pub fn humans(&self) -> impl Iterator<Item = &ParticipantId> {
        self.kinds.iter().filter(|(_, k)| **k == Kind::Human).map(|(id, _)| id)
    }

    pub fn by_judge(&self, id: &ParticipantId) -> impl Iterator<Item = &VerdictRecord> {
        self.by_judge.get(id).into_iter().flatten().map(|&i| &self.records[i])
    }

    pub fn about(&self, id: &ParticipantId) -> impl Iterator<Item = &VerdictRecord> {
        self.by_subject.get(id).into_iter().flatten().map(|&i| &self.records[i])
    }

    fn require_format(&self, expected: Format) -> Result<(), ScoringError> {
        if self.format != expected {
            return Err(ScoringError::FormatMismatch { expected, found: self.format });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for JudgmentMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            format: Format,
            kinds: BTreeMap<ParticipantId, Kind>,
            records: Vec<VerdictRecord>,
        }
        let raw = Raw::deserialize(d)?;
        JudgmentMatrix::new(raw.format, raw.kinds, raw.records).map_err(serde::de::Error::custom)
    }
}

/// Incremental construction of matrices from participant ids, for
/// experiments and tests.
#[derive(Debug, Clone)]
pub struct MatrixBuilder {
    format: Format,
    kinds: BTreeMap<ParticipantId, Kind>,
    records: Vec<VerdictRecord>,
}

impl MatrixBuilder {
    pub fn new(format: Format) -> Self {
        MatrixBuilder { format, kinds: BTreeMap::new(), records: Vec::new() }
    }

    pub fn participant(&mut self, id: &str, kind: Kind) -> &mut Self {
        self.kinds.insert(ParticipantId::new(id), kind);
        self
    }

    pub fn humans(&mut self, ids: &[&str]) -> &mut Self {
        for id in ids {
            self.participant(id, Kind::Human);
        }
        self
    }

    pub fn machines(&mut self, ids: &[&str]) -> &mut Self {
        for id in ids {
            self.participant(id, Kind::Machine);
        }
        self
    }

    fn kind(&self, id: &str) -> Kind {
        *self.kinds.get(&ParticipantId::new(id)).unwrap_or_else(|| panic!("unknown participant {id}"))
    }

    /// A one-to-one session between `a` and `b` with both labels.
    pub fn conversation(&mut self, a: &str, a_says_b: Kind, b: &str, b_says_a: Kind) -> &mut Self {
        let sid = SessionId(format!("o2o:{a}:{b}"));
        for (judge, subject, asserted) in [(a, b, a_says_b), (b, a, b_says_a)] {
            self.records.push(VerdictRecord {
                session_id: sid.clone(),
                judge: ParticipantId::new(judge),
                judge_kind: self.kind(judge),
                judgment: Judgment::Label { subject: ParticipantId::new(subject), asserted },
            });
        }
        self
    }

    /// A one-to-two session: `judge` names `picked` as the human of the pair.
    pub fn pick(&mut self, judge: &str, human: &str, machine: &str, picked: &str) -> &mut Self {
        let n = self.records.len();
        self.records.push(VerdictRecord {
            session_id: SessionId(format!("o2t:{judge}:{human}:{machine}#{n}")),
            judge: ParticipantId::new(judge),
            judge_kind: self.kind(judge),
            judgment: Judgment::Pick {
                human: ParticipantId::new(human),
                machine: ParticipantId::new(machine),
                picked: ParticipantId::new(picked),
            },
        });
        self
    }

    pub fn build(&self) -> Result<JudgmentMatrix, ScoringError> {
        JudgmentMatrix::new(self.format, self.kinds.clone(), self.records.clone())
    }
}

/// Counts of judgments that took a participant for human.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub hits: u64,
    pub total: u64,
}

impl Tally {
    pub fn rate(&self) -> Option<Fraction> {
        (self.total > 0).then(|| Fraction::of(self.hits, self.total))
    }
}

/// Human-judge tally for any participant.
pub fn human_judge_tally(matrix: &JudgmentMatrix, id: &ParticipantId) -> Tally {
    let mut t = Tally { hits: 0, total: 0 };
    for r in matrix.about(id).filter(|r| r.judge_kind == Kind::Human) {
        t.total += 1;
        if r.claims_human(id) {
            t.hits += 1;
        }
    }
    t
}

/// Fraction of human-judged sessions in which `machine` was taken for human.
pub fn humanness_rate(matrix: &JudgmentMatrix, machine: &ParticipantId) -> Result<Fraction, ScoringError> {
    human_judge_tally(matrix, machine)
        .rate()
        .ok_or_else(|| ScoringError::NoHumanJudgments(machine.clone()))
}

/// Machines recognised by human judges: humanness strictly below `theta_r`.
/// Only human-judge records are consulted.
pub fn recognized_machine_set(
    matrix: &JudgmentMatrix,
    theta_r: Fraction,
) -> Result<BTreeSet<ParticipantId>, ScoringError> {
    let mut r = BTreeSet::new();
    for m in matrix.machines() {
        if humanness_rate(matrix, m)? < theta_r {
            r.insert(m.clone());
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedSession {
    pub session_id: SessionId,
    /// The partner (one-to-one) or the pair's machine (one-to-two).
    pub subject: ParticipantId,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionB {
    pub passed: bool,
    pub rule: BRule,
    /// No relevant sessions: the condition holds vacuously.
    pub vacuous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Fraction>,
    pub sessions: Vec<JudgedSession>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassReport {
    pub machine_id: ParticipantId,
    pub humanness_rate: Fraction,
    pub human_judgments: u64,
    pub condition_a: bool,
    pub condition_b: ConditionB,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_c: Option<bool>,
    pub overall: bool,
    pub r_set_snapshot: Vec<ParticipantId>,
}

fn condition_b(
    rule: BRule,
    theta_m: Fraction,
    sessions: Vec<JudgedSession>,
) -> ConditionB {
    let correct = sessions.iter().filter(|s| s.correct).count() as u64;
    let n = sessions.len() as u64;
    let accuracy = (n > 0).then(|| Fraction::of(correct, n));
    let passed = match (rule, accuracy) {
        (_, None) => true,
        (BRule::Prohibition, Some(_)) => correct == n,
        (BRule::Accuracy | BRule::AllMachines, Some(acc)) => acc >= theta_m,
    };
    ConditionB { passed, rule, vacuous: n == 0, accuracy, sessions }
}

fn relevant_subject(rule: BRule, r_set: &BTreeSet<ParticipantId>, subject: &ParticipantId, kind: Kind) -> bool {
    match rule {
        BRule::Accuracy | BRule::Prohibition => r_set.contains(subject),
        BRule::AllMachines => kind == Kind::Machine,
    }
}

fn assemble(
    machine: &ParticipantId,
    tally: Tally,
    config: &TournamentConfig,
    b: ConditionB,
    c: Option<bool>,
    r_set: &BTreeSet<ParticipantId>,
) -> PassReport {
    let rate = tally.rate().expect("tally checked non-empty");
    let condition_a = rate >= config.theta_h;
    let overall = condition_a && b.passed && c.unwrap_or(true);
    PassReport {
        machine_id: machine.clone(),
        humanness_rate: rate,
        human_judgments: tally.total,
        condition_a,
        condition_b: b,
        condition_c: c,
        overall,
        r_set_snapshot: r_set.iter().cloned().collect(),
    }
}

/// One-to-one meta rule, per machine.
///
/// (a) humanness ≥ theta_h; (b) per `config.b_rule`, judged over partners
/// in R only; (c) optionally, every human partner labelled Human.
pub fn evaluate_meta_one_to_one(
    matrix: &JudgmentMatrix,
    config: &TournamentConfig,
) -> Result<Vec<PassReport>, ScoringError> {
    matrix.require_format(Format::OneToOne)?;
    let r_set = recognized_machine_set(matrix, config.theta_r())?;
    let mut reports = Vec::new();
    for m in matrix.machines() {
        let tally = human_judge_tally(matrix, m);
        let mut relevant = Vec::new();
        let mut all_humans_right = true;
        for r in matrix.by_judge(m) {
            let Judgment::Label { subject, asserted } = &r.judgment else { continue };
            let kind = matrix.kinds[subject];
            if kind == Kind::Human && *asserted != Kind::Human {
                all_humans_right = false;
            }
            if relevant_subject(config.b_rule, &r_set, subject, kind) {
                relevant.push(JudgedSession {
                    session_id: r.session_id.clone(),
                    subject: subject.clone(),
                    correct: *asserted == Kind::Machine,
                });
            }
        }
        let b = condition_b(config.b_rule, config.theta_m, relevant);
        let c = config.require_no_human_misjudged.then_some(all_humans_right);
        reports.push(assemble(m, tally, config, b, c, &r_set));
    }
    Ok(reports)
}

/// One-to-two meta rule, per machine.
///
/// (a) pick-rate ≥ theta_h (strict 1/2); (b) when judging a pair whose
/// machine is in R, picks the human with accuracy ≥ theta_m. Empty R makes
/// (b) vacuous. A machine that meets (a) but never judged a pair holding
/// some other member of R is `NoRSessions`; one that misses (a) cannot
/// pass anyway and is reported rather than aborting the evaluation.
pub fn evaluate_meta_one_to_two(
    matrix: &JudgmentMatrix,
    config: &TournamentConfig,
) -> Result<Vec<PassReport>, ScoringError> {
    matrix.require_format(Format::OneToTwo)?;
    let r_set = recognized_machine_set(matrix, config.theta_r())?;
    let mut reports = Vec::new();
    for m in matrix.machines() {
        let tally = human_judge_tally(matrix, m);
        let relevant: Vec<JudgedSession> = matrix
            .by_judge(m)
            .filter_map(|r| match &r.judgment {
                Judgment::Pick { human, machine, picked }
                    if relevant_subject(config.b_rule, &r_set, machine, Kind::Machine) =>
                {
                    Some(JudgedSession {
                        session_id: r.session_id.clone(),
                        subject: machine.clone(),
                        correct: picked == human,
                    })
                }
                _ => None,
            })
            .collect();
        let obliged = match config.b_rule {
            BRule::AllMachines => matrix.by_judge(m).next().is_some(),
            _ => r_set.iter().any(|r| r != m),
        };
        let meets_a = tally.rate().is_some_and(|rate| rate >= config.theta_h);
        if obliged && meets_a && relevant.is_empty() {
            return Err(ScoringError::NoRSessions(m.clone()));
        }
        let b = condition_b(config.b_rule, config.theta_m, relevant);
        reports.push(assemble(m, tally, config, b, None, &r_set));
    }
    Ok(reports)
}

pub fn evaluate_meta(matrix: &JudgmentMatrix, config: &TournamentConfig) -> Result<Vec<PassReport>, ScoringError> {
    match matrix.format {
        Format::OneToOne => evaluate_meta_one_to_one(matrix, config),
        Format::OneToTwo => evaluate_meta_one_to_two(matrix, config),
    }
}

/// The conventional reading: 30% of judges deceived.
pub const CLASSIC_THRESHOLD: Fraction = Fraction::from_reduced(3, 10);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub machine_id: ParticipantId,
    pub humanness_rate: Fraction,
    pub passed: bool,
}

/// Classic imitation-game rule: humanness ≥ threshold (inclusive).
/// Machine verdicts are ignored.
pub fn evaluate_classic_turing(
    matrix: &JudgmentMatrix,
    threshold: Fraction,
) -> Result<Vec<BaselineReport>, ScoringError> {
    matrix
        .machines()
        .map(|m| {
            let rate = humanness_rate(matrix, m)?;
            Ok(BaselineReport { machine_id: m.clone(), humanness_rate: rate, passed: rate >= threshold })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvertedReport {
    pub machine_id: ParticipantId,
    /// Accuracy where humans cannot tell (humans and machines outside R).
    pub indistinguishable_accuracy: Fraction,
    pub indistinguishable_sessions: usize,
    /// Accuracy on recognised machines.
    pub discriminable_accuracy: Fraction,
    pub discriminable_sessions: usize,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub passed: bool,
}

/// Per-machine result of the inverted baseline. A machine that judged too
/// few sessions in either group gets no verdict rather than failing the
/// whole evaluation (a lone member of R can never judge another).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum InvertedOutcome {
    Evaluated(InvertedReport),
    InsufficientJudgeSessions { machine_id: ParticipantId, group: String, have: usize, need: usize },
}

impl InvertedOutcome {
    pub fn machine_id(&self) -> &ParticipantId {
        match self {
            InvertedOutcome::Evaluated(r) => &r.machine_id,
            InvertedOutcome::InsufficientJudgeSessions { machine_id, .. } => machine_id,
        }
    }

    pub fn report(&self) -> Option<&InvertedReport> {
        match self {
            InvertedOutcome::Evaluated(r) => Some(r),
            InvertedOutcome::InsufficientJudgeSessions { .. } => None,
        }
    }

    /// The outcome as a result, for callers that need every machine evaluated.
    pub fn into_result(self) -> Result<InvertedReport, ScoringError> {
        match self {
            InvertedOutcome::Evaluated(r) => Ok(r),
            InvertedOutcome::InsufficientJudgeSessions { machine_id, group, have, need } => {
                Err(ScoringError::InsufficientJudgeSessions {
                    judge: machine_id,
                    group: if group == "indistinguishable" { "indistinguishable" } else { "discriminable" },
                    have,
                    need,
                })
            }
        }
    }
}

/// Inverted test baseline: a machine judge passes when it is at chance
/// (within `chance_band` of 1/2) where humans cannot tell, and reaches
/// `theta_m` where humans can.
pub fn evaluate_inverted_watt(
    matrix: &JudgmentMatrix,
    config: &TournamentConfig,
    chance_band: Fraction,
) -> Result<Vec<InvertedOutcome>, ScoringError> {
    let r_set = recognized_machine_set(matrix, config.theta_r())?;
    let need = config.min_judge_sessions.max(1);
    let half = Fraction::of(1, 2);
    let mut outcomes = Vec::new();
    'machines: for k in matrix.machines() {
        let (mut blind, mut sharp) = (Tally { hits: 0, total: 0 }, Tally { hits: 0, total: 0 });
        for r in matrix.by_judge(k) {
            let discriminable = match &r.judgment {
                Judgment::Label { subject, .. } => r_set.contains(subject),
                Judgment::Pick { machine, .. } => r_set.contains(machine),
            };
            let correct = r.is_correct(&matrix.kinds);
            let t = if discriminable { &mut sharp } else { &mut blind };
            t.total += 1;
            t.hits += u64::from(correct);
        }
        for (group, t) in [("indistinguishable", blind), ("discriminable", sharp)] {
            if (t.total as usize) < need {
                outcomes.push(InvertedOutcome::InsufficientJudgeSessions {
                    machine_id: k.clone(),
                    group: group.to_string(),
                    have: t.total as usize,
                    need,
                });
                continue 'machines;
            }
        }
        let blind_acc = blind.rate().expect("checked non-empty");
        let sharp_acc = sharp.rate().expect("checked non-empty");
        let condition_i = blind_acc.abs_diff(&half) <= chance_band;
        let condition_ii = sharp_acc >= config.theta_m;
        outcomes.push(InvertedOutcome::Evaluated(InvertedReport {
            machine_id: k.clone(),
            indistinguishable_accuracy: blind_acc,
            indistinguishable_sessions: blind.total as usize,
            discriminable_accuracy: sharp_acc,
            discriminable_sessions: sharp.total as usize,
            condition_i,
            condition_ii,
            passed: condition_i && condition_ii,
        }));
    }
    Ok(outcomes)
}
