//! Session schedules for both tournament formats, with conflict-of-interest
//! exclusion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{derive_seed, to_canonical_json};
use crate::domain::{Format, Kind, Participant, ParticipantId, ValidatedPool};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_string())
    }
}

/// One scheduled conversation.
///
/// Session ids are derived from the participant ids involved, so adding a
/// participant to a pool leaves every existing session's id and seed
/// unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: SessionId,
    pub format: Format,
    /// Present only in one-to-two sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<ParticipantId>,
    /// One-to-one: the two conversants, who judge each other.
    /// One-to-two: one human and one machine in randomized order.
    pub players: [ParticipantId; 2],
    pub seed: u64,
}

impl SessionPlan {
    pub fn participants(&self) -> impl Iterator<Item = &ParticipantId> {
        self.judge.iter().chain(self.players.iter())
    }

    pub fn involves(&self, id: &ParticipantId) -> bool {
        self.participants().any(|p| p == id)
    }

    /// Participants whose verdict closes the session.
    pub fn judges(&self) -> Vec<ParticipantId> {
        match &self.judge {
            Some(j) => vec![j.clone()],
            None => self.players.to_vec(),
        }
    }
}

/// Conflict-of-interest relation: two distinct participants conflict when
/// they share an affiliation tag.
#[derive(Debug, Clone, Default)]
pub struct CoiPolicy {
    pub enabled: bool,
    affiliations: BTreeMap<ParticipantId, BTreeSet<String>>,
}

impl CoiPolicy {
    pub fn new<'a>(enabled: bool, participants: impl IntoIterator<Item = &'a Participant>) -> Self {
        CoiPolicy {
            enabled,
            affiliations: participants
                .into_iter()
                .map(|p| (p.id.clone(), p.affiliations.clone()))
                .collect(),
        }
    }

    pub fn from_pool(pool: &ValidatedPool, enabled: bool) -> Self {
        Self::new(enabled, pool.participants())
    }

    pub fn disabled() -> Self {
        CoiPolicy::default()
    }

    pub fn conflicts(&self, a: &ParticipantId, b: &ParticipantId) -> bool {
        if !self.enabled || a == b {
            return false;
        }
        match (self.affiliations.get(a), self.affiliations.get(b)) {
            (Some(x), Some(y)) => !x.is_disjoint(y),
            _ => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("schedule is empty after conflict-of-interest exclusion")]
    ScheduleEmpty,
}

fn ordered_pair(seed: u64, a: ParticipantId, b: ParticipantId) -> [ParticipantId; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random_bool(0.5) {
        [b, a]
    } else {
        [a, b]
    }
}

/// Every unordered pair of distinct participants converses once; both
/// conversants judge each other.
pub fn schedule_one_to_one(
    pool: &ValidatedPool,
    coi: &CoiPolicy,
    master_seed: u64,
) -> Result<Vec<SessionPlan>, ScheduleError> {
    let mut ids: Vec<ParticipantId> = pool.participants().map(|p| p.id.clone()).collect();
    ids.sort();
    let mut plans = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if coi.conflicts(a, b) {
                continue;
            }
            let session_id = SessionId(format!("o2o:{a}:{b}"));
            let seed = derive_seed(master_seed, session_id.as_str());
            plans.push(SessionPlan {
                players: ordered_pair(seed, a.clone(), b.clone()),
                session_id,
                format: Format::OneToOne,
                judge: None,
                seed,
            });
        }
    }
    if plans.is_empty() {
        return Err(ScheduleError::ScheduleEmpty);
    }
    Ok(plans)
}

/// Every participant judges every (human, machine) pair they are not part of.
pub fn schedule_one_to_two(
    pool: &ValidatedPool,
    coi: &CoiPolicy,
    master_seed: u64,
) -> Result<Vec<SessionPlan>, ScheduleError> {
    let mut judges: Vec<ParticipantId> = pool.participants().map(|p| p.id.clone()).collect();
    judges.sort();
    let mut plans = Vec::new();
    for h in pool.humans.iter().map(|p| &p.id) {
        for m in pool.machines.iter().map(|p| &p.id) {
            if coi.conflicts(h, m) {
                continue;
            }
            for j in &judges {
                if j == h || j == m || coi.conflicts(j, h) || coi.conflicts(j, m) {
                    continue;
                }
                let session_id = SessionId(format!("o2t:{j}:{h}:{m}"));
                let seed = derive_seed(master_seed, session_id.as_str());
                plans.push(SessionPlan {
                    players: ordered_pair(seed, h.clone(), m.clone()),
                    session_id,
                    format: Format::OneToTwo,
                    judge: Some(j.clone()),
                    seed,
                });
            }
        }
    }
    if plans.is_empty() {
        return Err(ScheduleError::ScheduleEmpty);
    }
    Ok(plans)
}

pub fn schedule(
    pool: &ValidatedPool,
    format: Format,
    coi: &CoiPolicy,
    master_seed: u64,
) -> Result<Vec<SessionPlan>, ScheduleError> {
    match format {
        Format::OneToOne => schedule_one_to_one(pool, coi, master_seed),
        Format::OneToTwo => schedule_one_to_two(pool, coi, master_seed),
    }
}

/// Ground-truth check used by debug assertions and tests.
pub fn is_mixed_pair(plan: &SessionPlan, kinds: &BTreeMap<ParticipantId, Kind>) -> bool {
    let a = kinds.get(&plan.players[0]);
    let b = kinds.get(&plan.players[1]);
    matches!((a, b), (Some(x), Some(y)) if x != y)
}

/// Write the schedule as JSONL, one canonical plan per line.
pub fn write_schedule_jsonl<W: Write>(plans: &[SessionPlan], mut out: W) -> io::Result<()> {
    for plan in plans {
        let line = to_canonical_json(plan).map_err(io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_pool, TournamentConfig};

    fn pool(h: usize, m: usize) -> ValidatedPool {
        let mut r: Vec<_> = (0..h).map(|i| Participant::human(format!("h{i:02}"))).collect();
        r.extend((0..m).map(|i| Participant::machine(format!("m{i:02}"))));
        let mut c = TournamentConfig::strict(Format::OneToOne);
        c.min_humans = 1;
        c.min_machines = 1;
        validate_pool(&r, &c).unwrap()
    }

    #[test]
    fn one_to_one_two_plus_two() {
        let p = pool(2, 2);
        assert_eq!(schedule_one_to_one(&p, &CoiPolicy::disabled(), 1).unwrap().len(), 6);
    }

    #[test]
    fn one_to_one_coi_excludes_colluding_machines() {
        let mut p = pool(2, 2);
        for m in &mut p.machines {
            m.affiliations.insert("labX".into());
        }
        let plans = schedule_one_to_one(&p, &CoiPolicy::from_pool(&p, true), 1).unwrap();
        assert_eq!(plans.len(), 5);
        assert!(plans.iter().all(|s| !(s.involves(&"m00".into()) && s.involves(&"m01".into()))));
    }

    #[test]
    fn one_to_one_single_pair() {
        let p = pool(1, 1);
        assert_eq!(schedule_one_to_one(&p, &CoiPolicy::disabled(), 1).unwrap().len(), 1);
    }

    #[test]
    fn one_to_two_counts() {
        assert_eq!(schedule_one_to_two(&pool(2, 2), &CoiPolicy::disabled(), 1).unwrap().len(), 8);
    }

    #[test]
    fn one_to_two_judge_coi() {
        let mut p = pool(2, 2);
        p.humans[0].affiliations.insert("t".into());
        p.machines[1].affiliations.insert("t".into());
        let coi = CoiPolicy::from_pool(&p, true);
        let plans = schedule_one_to_two(&p, &coi, 1).unwrap();
        // h00|m00: judge h01 only (m01 conflicts with h00); h00|m01 excluded;
        // h01|m00: h00 and m01; h01|m01: m00 only (h00 conflicts with m01).
        assert_eq!(plans.len(), 4);
        for s in &plans {
            let j = s.judge.as_ref().unwrap();
            assert!(!s.players.iter().any(|x| coi.conflicts(j, x)));
            assert!(!coi.conflicts(&s.players[0], &s.players[1]));
        }
    }

    #[test]
    fn everything_conflicting_is_empty() {
        let mut p = pool(1, 1);
        p.humans[0].affiliations.insert("t".into());
        p.machines[0].affiliations.insert("t".into());
        assert_eq!(
            schedule_one_to_one(&p, &CoiPolicy::from_pool(&p, true), 1),
            Err(ScheduleError::ScheduleEmpty)
        );
    }

    #[test]
    fn jsonl_export_is_canonical() {
        let plans = schedule_one_to_two(&pool(2, 2), &CoiPolicy::disabled(), 3).unwrap();
        let mut buf = Vec::new();
        write_schedule_jsonl(&plans, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("{\"format\":\"one_to_two\",\"judge\":"));
        let back: SessionPlan = serde_json::from_str(first).unwrap();
        assert_eq!(back, plans[0]);
    }
}
