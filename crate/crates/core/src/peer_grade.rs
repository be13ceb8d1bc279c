//! Peer-grading fixed point.
//!
//! Each agent's score is the score-weighted share of judges who took it for
//! human, less a penalty for its own mis-grades of subjects whose kind is
//! decidable (humans, and machines humans recognise). The update is damped
//! and clamped to `[0, 1]`:
//!
//! ```text
//! s_i <- (1 - damping) * s_i + damping * clamp01(sum_j w_j v_ji / sum_j w_j - beta * e_i)
//! w_j  = max(s_j, 0.01)
//! ```
//!
//! Scores are diagnostic; pass decisions come from [`crate::scoring`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Kind, ParticipantId};
use crate::fraction::Fraction;
use crate::scoring::{Judgment, JudgmentMatrix, VerdictRecord};

const WEIGHT_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeerGradeParams {
    pub beta: f64,
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub init_score: f64,
}

impl Default for PeerGradeParams {
    fn default() -> Self {
        PeerGradeParams { beta: 0.5, damping: 0.5, tolerance: 1e-9, max_iterations: 10_000, init_score: 0.5 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeerGradeError {
    #[error("{0} made no ground-truth-decidable judgments")]
    NoDecidableJudgments(ParticipantId),
    #[error("{0} received no judgments")]
    MissingJudgments(ParticipantId),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, scores: Vec<f64> },
}

impl PeerGradeParams {
    pub fn validate(&self) -> Result<(), PeerGradeError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(PeerGradeError::InvalidParams("beta must lie in [0, 1]"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(PeerGradeError::InvalidParams("damping must lie in (0, 1]"));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(PeerGradeError::InvalidParams("tolerance must be positive"));
        }
        if !(0.0..=1.0).contains(&self.init_score) {
            return Err(PeerGradeError::InvalidParams("init_score must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Whether a record's ground truth counts against its judge. Non-R machines
/// are undecidable: humans themselves could not tell.
fn decidable(r: &VerdictRecord, kinds: &BTreeMap<ParticipantId, Kind>, r_set: &BTreeSet<ParticipantId>) -> bool {
    match &r.judgment {
        Judgment::Label { subject, .. } => kinds.get(subject) == Some(&Kind::Human) || r_set.contains(subject),
        Judgment::Pick { machine, .. } => r_set.contains(machine),
    }
}

/// Share of `agent`'s decidable judgments that contradict ground truth.
pub fn misgrade_rate(
    matrix: &JudgmentMatrix,
    r_set: &BTreeSet<ParticipantId>,
    agent: &ParticipantId,
) -> Result<Fraction, PeerGradeError> {
    let (mut wrong, mut total) = (0u64, 0u64);
    for r in matrix.by_judge(agent).filter(|r| decidable(r, &matrix.kinds, r_set)) {
        total += 1;
        wrong += u64::from(!r.is_correct(&matrix.kinds));
    }
    if total == 0 {
        return Err(PeerGradeError::NoDecidableJudgments(agent.clone()));
    }
    Ok(Fraction::of(wrong, total))
}

/// A peer-grading instance over agents `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerGradeProblem {
    pub n: usize,
    /// `(judge, subject, took_for_human)`; repeated pairs count separately.
    pub votes: Vec<(usize, usize, bool)>,
    /// Misgrade rate `e_i` per agent.
    pub penalties: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub scores: Vec<f64>,
    pub iterations: usize,
    /// `max_i |T(s)_i - s_i|` at the returned point, where `T` is the
    /// undamped update.
    pub residual: f64,
}

impl PeerGradeProblem {
    /// Build an instance from a judgment matrix. Agents with no decidable
    /// judgments get a zero penalty.
    pub fn from_matrix(
        matrix: &JudgmentMatrix,
        r_set: &BTreeSet<ParticipantId>,
    ) -> Result<(Vec<ParticipantId>, Self), PeerGradeError> {
        let ids: Vec<ParticipantId> = matrix.kinds.keys().cloned().collect();
        let index: BTreeMap<&ParticipantId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut votes = Vec::new();
        for r in &matrix.records {
            let j = index[&r.judge];
            for s in r.subjects() {
                votes.push((j, index[s], r.claims_human(s)));
            }
        }
        let mut penalties = Vec::with_capacity(ids.len());
        for id in &ids {
            penalties.push(match misgrade_rate(matrix, r_set, id) {
                Ok(e) => e.to_f64(),
                Err(PeerGradeError::NoDecidableJudgments(_)) => 0.0,
                Err(e) => return Err(e),
            });
        }
        let problem = PeerGradeProblem { n: ids.len(), votes, penalties };
        if let Some(i) = problem.unjudged().first() {
            return Err(PeerGradeError::MissingJudgments(ids[*i].clone()));
        }
        Ok((ids, problem))
    }

    fn unjudged(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        for &(_, s, _) in &self.votes {
            seen[s] = true;
        }
        (0..self.n).filter(|&i| !seen[i]).collect()
    }

    fn by_subject(&self) -> Vec<Vec<(usize, bool)>> {
        let mut out = vec![Vec::new(); self.n];
        for &(j, i, human) in &self.votes {
            out[i].push((j, human));
        }
        out
    }

    /// Component `i` of the undamped update `T(s)`.
    fn target_of(&self, i: usize, received: &[(usize, bool)], s: &[f64], beta: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(j, human) in received {
            let w = s[j].max(WEIGHT_FLOOR);
            den += w;
            if human {
                num += w;
            }
        }
        (num / den - beta * self.penalties[i]).clamp(0.0, 1.0)
    }

    fn residual(&self, received: &[Vec<(usize, bool)>], s: &[f64], beta: f64) -> (f64, Vec<f64>) {
        let t: Vec<f64> = (0..self.n).map(|i| self.target_of(i, &received[i], s, beta)).collect();
        (max_gap(s, &t), t)
    }

    /// Jacobian of `F(s) = T(s) - s`. Clamped components and floored
    /// weights contribute zero slope.
    fn jacobian(&self, received: &[Vec<(usize, bool)>], s: &[f64], beta: f64) -> DMatrix<f64> {
        let mut jac = -DMatrix::<f64>::identity(self.n, self.n);
        for i in 0..self.n {
            let (mut num, mut den) = (0.0, 0.0);
            for &(j, human) in &received[i] {
                let w = s[j].max(WEIGHT_FLOOR);
                den += w;
                if human {
                    num += w;
                }
            }
            let raw = num / den - beta * self.penalties[i];
            if !(0.0..=1.0).contains(&raw) {
                continue;
            }
            let avg = num / den;
            for &(j, human) in &received[i] {
                if s[j] > WEIGHT_FLOOR {
                    jac[(i, j)] += (f64::from(u8::from(human)) - avg) / den;
                }
            }
        }
        jac
    }

    /// One projected Newton step with backtracking; `None` if no step
    /// shrinks the residual.
    fn newton_step(&self, received: &[Vec<(usize, bool)>], s: &[f64], beta: f64) -> Option<Vec<f64>> {
        let gap = |x: &[f64]| -> DVector<f64> {
            let (_, t) = self.residual(received, x, beta);
            DVector::from_iterator(self.n, t.iter().zip(x).map(|(t, x)| t - x))
        };
        let f = gap(s);
        let merit = f.norm();
        let delta = self.jacobian(received, s, beta).lu().solve(&-f)?;
        let mut alpha = 1.0;
        while alpha > 1e-6 {
            let trial: Vec<f64> = s.iter().zip(delta.iter()).map(|(x, d)| (x + alpha * d).clamp(0.0, 1.0)).collect();
            if gap(&trial).norm() < merit {
                return Some(trial);
            }
            alpha *= 0.5;
        }
        None
    }

    /// Iterate to the fixed point.
    ///
    /// Convergence is declared once a step at the configured damping would
    /// move no score by more than `tolerance`. The undamped target at that
    /// point is returned, so instances whose fixed point sits on an end of
    /// the interval land on it exactly.
    ///
    /// Updates are applied in place, agent by agent (Gauss-Seidel order).
    /// Low-score judges carry small, sensitive weights and the sweeps can
    /// settle into a cycle, so after [`SWEEPS_BEFORE_NEWTON`] sweeps each
    /// iteration takes a safeguarded Newton step on `T(s) - s` instead,
    /// falling back to a sweep when Newton makes no progress. A run that is
    /// still stuck after [`ATTEMPT_BUDGET`] iterations restarts from the
    /// next starting point: all ones, all zeros, then a fixed pseudo-random
    /// sequence. None of this changes the
    /// set of fixed points, only which one is reached, and the whole
    /// procedure is deterministic.
    pub fn solve(&self, params: &PeerGradeParams) -> Result<Solution, PeerGradeError> {
        params.validate()?;
        if !self.unjudged().is_empty() {
            return Err(PeerGradeError::InvalidParams("every agent needs at least one vote"));
        }
        let received = self.by_subject();
        let mut restarts = ChaCha8Rng::seed_from_u64(RESTART_SEED);
        let mut s = vec![params.init_score; self.n];
        let mut attempt = 0;
        let mut since_restart = 0;
        for iteration in 1..=params.max_iterations {
            let (residual, t) = self.residual(&received, &s, params.beta);
            if residual * params.damping <= params.tolerance {
                return Ok(Solution { scores: t, iterations: iteration, residual });
            }
            since_restart += 1;
            if since_restart > ATTEMPT_BUDGET {
                attempt += 1;
                since_restart = 0;
                s = match attempt {
                    1 => vec![1.0; self.n],
                    2 => vec![0.0; self.n],
                    _ => (0..self.n).map(|_| restarts.random::<f64>()).collect(),
                };
                continue;
            }
            if attempt > 0 || since_restart > SWEEPS_BEFORE_NEWTON {
                if let Some(next) = self.newton_step(&received, &s, params.beta) {
                    s = next;
                    continue;
                }
            }
            for i in 0..self.n {
                let ti = self.target_of(i, &received[i], &s, params.beta);
                s[i] = (1.0 - params.damping) * s[i] + params.damping * ti;
            }
        }
        let (residual, _) = self.residual(&received, &s, params.beta);
        Err(PeerGradeError::NoConvergence { iterations: params.max_iterations, residual, scores: s })
    }
}

pub const SWEEPS_BEFORE_NEWTON: usize = 100;
pub const ATTEMPT_BUDGET: usize = 200;
const RESTART_SEED: u64 = 0x7065_6572;

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Converged scores keyed by participant, as exported in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerGrades {
    pub scores: BTreeMap<ParticipantId, f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn peer_grade_fixed_point(
    matrix: &JudgmentMatrix,
    r_set: &BTreeSet<ParticipantId>,
    params: &PeerGradeParams,
) -> Result<PeerGrades, PeerGradeError> {
    let (ids, problem) = PeerGradeProblem::from_matrix(matrix, r_set)?;
    let sol = problem.solve(params)?;
    Ok(PeerGrades {
        scores: ids.into_iter().zip(sol.scores).collect(),
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Format;
    use crate::scoring::MatrixBuilder;

    use Kind::{Human, Machine};

    #[test]
    fn misgrade_counts_only_decidable_subjects() {
        let mut b = MatrixBuilder::new(Format::OneToOne);
        b.humans(&["h"]).machines(&["a", "r", "x", "y"]);
        b.conversation("a", Machine, "h", Machine);
        b.conversation("a", Machine, "r", Human);
        b.conversation("a", Human, "x", Human);
        b.conversation("h", Human, "x", Machine);
        b.conversation("h", Machine, "r", Machine);
        b.conversation("y", Human, "x", Machine);
        let m = b.build().unwrap();
        let r_set: BTreeSet<_> = [ParticipantId::from("r")].into();
        // a mislabels h and gets r right; x is undecidable.
        assert_eq!(misgrade_rate(&m, &r_set, &"a".into()).unwrap(), Fraction::of(1, 2));
        assert_eq!(misgrade_rate(&m, &r_set, &"h".into()).unwrap(), Fraction::ZERO);
        assert_eq!(misgrade_rate(&m, &r_set, &"r".into()).unwrap(), Fraction::ONE);
        // y judged only x, which is outside R.
        assert!(matches!(
            misgrade_rate(&m, &r_set, &"y".into()),
            Err(PeerGradeError::NoDecidableJudgments(_))
        ));
    }

    #[test]
    fn every_vote_human_converges_to_one() {
        let p = PeerGradeProblem {
            n: 3,
            votes: vec![(0, 1, true), (1, 2, true), (2, 0, true), (1, 0, true)],
            penalties: vec![0.0; 3],
        };
        let sol = p.solve(&PeerGradeParams::default()).unwrap();
        assert!(sol.scores.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn every_vote_machine_converges_to_zero() {
        let p = PeerGradeProblem {
            n: 3,
            votes: vec![(0, 1, false), (1, 2, false), (2, 0, false)],
            penalties: vec![0.0; 3],
        };
        let sol = p.solve(&PeerGradeParams::default()).unwrap();
        assert!(sol.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn bad_params_are_rejected() {
        let p = PeerGradeProblem { n: 1, votes: vec![(0, 0, true)], penalties: vec![0.0] };
        let bad = PeerGradeParams { damping: 0.0, ..Default::default() };
        assert!(matches!(p.solve(&bad), Err(PeerGradeError::InvalidParams(_))));
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let p = PeerGradeProblem { n: 2, votes: vec![(0, 1, true), (1, 0, false)], penalties: vec![0.0, 0.0] };
        let tight = PeerGradeParams { max_iterations: 2, damping: 0.01, ..Default::default() };
        match p.solve(&tight) {
            Err(PeerGradeError::NoConvergence { iterations, residual, scores }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
                assert_eq!(scores.len(), 2);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }
}
