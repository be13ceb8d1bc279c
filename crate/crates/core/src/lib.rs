//! Engine for symmetric imitation-game tournaments, where every human and
//! machine both converses and judges.
//!
//! Modules, bottom-up:
//!
//! - [`domain`]: participants, tournament configuration, pool validation.
//! - [`scheduler`]: one-to-one and one-to-two session plans with
//!   conflict-of-interest exclusion.
//! - [`session`]: the event-sourced session state machine.
//! - [`scoring`]: judgment matrices and pass rules (meta, classic, inverted).
//! - [`peer_grade`]: fixed-point humanness scores.
//! - [`winograd`]: schema banks, answer sheets, meta-challenge evaluation.
//! - [`eventlog`]: the hash-chained append-only log and replay.
//! - [`protocol`]: the newline-delimited JSON wire frames.
//! - [`tournament`]: shared setup (aliases, schedule) and the report export.
//! - [`sim`]: synthetic agents and Monte Carlo experiments.

pub mod canonical;
pub mod domain;
pub mod eventlog;
pub mod fraction;
pub mod peer_grade;
pub mod protocol;
pub mod scheduler;
pub mod scoring;
pub mod session;
pub mod sim;
pub mod tournament;
pub mod winograd;

pub use fraction::Fraction;
