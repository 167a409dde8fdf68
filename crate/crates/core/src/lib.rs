//! Sequential fairness auditing by betting.
//!
//! An auditor observes model outputs for two or more groups as they arrive and
//! bets against the hypothesis that the groups receive equal mean outputs.
//! The accumulated wealth is a nonnegative supermartingale under that null, so
//! rejecting once it reaches `1/alpha` controls the false-positive rate at
//! `alpha` at any stopping time.

pub mod baselines;
pub mod bench;
pub mod betting;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod payoffs;
pub mod seeds;
pub mod simulate;
pub mod types;

pub use betting::{BetDomain, BettorState};
pub use engine::{run_stream, AuditSession, StreamAuditor};
pub use error::{AuditError, Result};
pub use types::{
    AuditConfig, AuditRecord, AuditReport, Decision, DecisionKind, GroupLabel, PayoffStrategy,
};
