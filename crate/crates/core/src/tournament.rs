//! Tournament setup shared by the simulator and the live service, and the
//! exported tournament report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::derive_seed;
use crate::domain::{
    assign_display_aliases, validate_config, validate_pool, ConfigError, Kind, Participant, ParticipantId, PoolError,
    TournamentConfig,
};
use crate::eventlog::{LogWriter, Record, Replay};
use crate::peer_grade::{PeerGradeError, PeerGradeParams, PeerGradeProblem, PeerGrades};
use crate::scheduler::{schedule, CoiPolicy, ScheduleError, SessionPlan};
use crate::scoring::{
    evaluate_classic_turing, evaluate_inverted_watt, evaluate_meta, recognized_machine_set, BaselineReport,
    InvertedOutcome, JudgmentMatrix, PassReport, ScoringError, CLASSIC_THRESHOLD,
};
use crate::session::SessionRoster;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// A validated roster with aliases and the full session schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TournamentSetup {
    pub config: TournamentConfig,
    pub master_seed: u64,
    /// Sorted by id; every participant has a display alias.
    pub roster: Vec<Participant>,
    pub sessions: Vec<(SessionPlan, SessionRoster)>,
    pub warnings: Vec<String>,
}

impl TournamentSetup {
    pub fn prepare(
        config: &TournamentConfig,
        roster: &[Participant],
        master_seed: u64,
    ) -> Result<TournamentSetup, SetupError> {
        let config = validate_config(config.clone())?;
        let mut roster = roster.to_vec();
        roster.sort_by(|a, b| a.id.cmp(&b.id));
        if roster.iter().any(|p| p.display_alias.is_empty()) {
            assign_display_aliases(&mut roster, derive_seed(master_seed, "aliases"));
        }
        let pool = validate_pool(&roster, &config)?;
        let coi = CoiPolicy::from_pool(&pool, config.coi_enabled);
        let plans = schedule(&pool, config.format, &coi, master_seed)?;
        let alias: BTreeMap<&ParticipantId, &str> =
            roster.iter().map(|p| (&p.id, p.display_alias.as_str())).collect();
        let sessions = plans
            .into_iter()
            .map(|plan| {
                let r = SessionRoster {
                    players: [alias[&plan.players[0]].to_string(), alias[&plan.players[1]].to_string()],
                    judge: plan.judge.as_ref().map(|j| alias[j].to_string()),
                };
                (plan, r)
            })
            .collect();
        Ok(TournamentSetup { config, master_seed, warnings: pool.warnings, roster, sessions })
    }

    pub fn kinds(&self) -> BTreeMap<ParticipantId, Kind> {
        self.roster.iter().map(|p| (p.id.clone(), p.kind)).collect()
    }

    pub fn participant(&self, id: &ParticipantId) -> Option<&Participant> {
        self.roster.iter().find(|p| &p.id == id)
    }

    /// Header and one `session` record per plan.
    pub fn write_preamble<W: Write>(&self, log: &mut LogWriter<W>, replication: Option<u64>) -> io::Result<()> {
        log.append(&Record::Header {
            config: self.config.clone(),
            master_seed: self.master_seed,
            roster: self.roster.clone(),
            replication,
        })?;
        for (plan, roster) in &self.sessions {
            log.append(&Record::Session { plan: plan.clone(), roster: roster.clone() })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PeerGradeSection {
    Converged(PeerGrades),
    NoConvergence(PeerGrades),
    Unavailable { reason: String },
}

impl PeerGradeSection {
    fn compute(matrix: &JudgmentMatrix, r_set: &BTreeSet<ParticipantId>, params: &PeerGradeParams) -> Self {
        let (ids, problem) = match PeerGradeProblem::from_matrix(matrix, r_set) {
            Ok(p) => p,
            Err(e) => return PeerGradeSection::Unavailable { reason: e.to_string() },
        };
        match problem.solve(params) {
            Ok(sol) => PeerGradeSection::Converged(PeerGrades {
                scores: ids.into_iter().zip(sol.scores).collect(),
                iterations: sol.iterations,
                residual: sol.residual,
            }),
            Err(PeerGradeError::NoConvergence { iterations, residual, scores }) => {
                PeerGradeSection::NoConvergence(PeerGrades {
                    scores: ids.into_iter().zip(scores).collect(),
                    iterations,
                    residual,
                })
            }
            Err(e) => PeerGradeSection::Unavailable { reason: e.to_string() },
        }
    }
}

/// Per-tournament export: meta-rule reports with the R set, the baseline
/// scorers for comparison, peer grades, the config echo and the log hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentReport {
    pub config: TournamentConfig,
    pub log_hash: String,
    pub master_seed: u64,
    pub r_set: Vec<ParticipantId>,
    pub reports: Vec<PassReport>,
    pub classic: Vec<BaselineReport>,
    pub inverted: Vec<InvertedOutcome>,
    pub peer_grades: PeerGradeSection,
}

impl TournamentReport {
    /// Score a replayed log under `config` (usually the log's own).
    pub fn build(replay: &Replay, config: &TournamentConfig, params: &PeerGradeParams) -> Result<Self, ScoringError> {
        let matrix = &replay.matrix;
        let r_set = recognized_machine_set(matrix, config.theta_r())?;
        Ok(TournamentReport {
            config: config.clone(),
            log_hash: replay.log_hash.clone(),
            master_seed: replay.master_seed,
            reports: evaluate_meta(matrix, config)?,
            classic: evaluate_classic_turing(matrix, CLASSIC_THRESHOLD)?,
            inverted: evaluate_inverted_watt(matrix, config, config.chance_band)?,
            peer_grades: PeerGradeSection::compute(matrix, &r_set, params),
            r_set: r_set.into_iter().collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let yes = |b: bool| if b { "PASS" } else { "fail" };
        let _ = writeln!(out, "log {}", self.log_hash);
        let _ = writeln!(
            out,
            "theta_h {}  theta_m {}  theta_r {}  b_rule {:?}",
            self.config.theta_h,
            self.config.theta_m,
            self.config.theta_r(),
            self.config.b_rule
        );
        let r: Vec<&str> = self.r_set.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(out, "recognised machines: {}", if r.is_empty() { "(none)".into() } else { r.join(", ") });
        let classic: BTreeMap<_, _> = self.classic.iter().map(|c| (&c.machine_id, c.passed)).collect();
        let _ = writeln!(out, "{:<16} {:>10} {:>5} {:>5} {:>5} {:>7}", "machine", "humanness", "(a)", "(b)", "meta", "classic");
        for rep in &self.reports {
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>5} {:>5} {:>5} {:>7}",
                rep.machine_id.as_str(),
                rep.humanness_rate.to_string(),
                yes(rep.condition_a),
                yes(rep.condition_b.passed),
                yes(rep.overall),
                classic.get(&rep.machine_id).map_or("-", |&p| yes(p)),
            );
        }
        match &self.peer_grades {
            PeerGradeSection::Converged(g) | PeerGradeSection::NoConvergence(g) => {
                let converged = matches!(self.peer_grades, PeerGradeSection::Converged(_));
                let _ = writeln!(
                    out,
                    "peer grades ({}, {} iterations, residual {:.1e}):",
                    if converged { "converged" } else { "NOT converged" },
                    g.iterations,
                    g.residual
                );
                for (id, s) in &g.scores {
                    let _ = writeln!(out, "  {:<16} {:.4}", id.as_str(), s);
                }
            }
            PeerGradeSection::Unavailable { reason } => {
                let _ = writeln!(out, "peer grades unavailable: {reason}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Format;

    fn roster(h: usize, m: usize) -> Vec<Participant> {
        let mut r: Vec<_> = (0..h).map(|i| Participant::human(format!("h{i}"))).collect();
        r.extend((0..m).map(|i| Participant::machine(format!("m{i}"))));
        r
    }

    #[test]
    fn setup_assigns_aliases_and_maps_rosters() {
        let s = TournamentSetup::prepare(&TournamentConfig::strict(Format::OneToTwo), &roster(2, 2), 9).unwrap();
        assert!(s.roster.iter().all(|p| p.display_alias.starts_with('P')));
        assert_eq!(s.sessions.len(), 8);
        for (plan, r) in &s.sessions {
            let j = s.participant(plan.judge.as_ref().unwrap()).unwrap();
            assert_eq!(r.judge.as_deref(), Some(j.display_alias.as_str()));
        }
    }

    #[test]
    fn setup_is_roster_order_insensitive() {
        let c = TournamentConfig::strict(Format::OneToOne);
        let mut rev = roster(2, 2);
        rev.reverse();
        assert_eq!(
            TournamentSetup::prepare(&c, &roster(2, 2), 5).unwrap(),
            TournamentSetup::prepare(&c, &rev, 5).unwrap()
        );
    }
}
