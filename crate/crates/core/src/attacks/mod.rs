//! Full secret-disclosure attacks against both protocols, built purely on
//! eavesdropped channel transcripts: the adversary observes two sessions
//! (blocking the final message of the first so the tag keeps its secrets),
//! then searches rotation offsets until every observed word is explained.
//!
//! All searches return candidate *sets*: offset equations can admit
//! spurious solutions, so filters shrink the set and callers measure
//! uniqueness instead of assuming it.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::channel::ChannelError;

pub mod ksp;
pub mod sovnokp;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("channel error: {0}")]
    Channel(#[from] ChannelError),
    #[error("session {session} aborted during collection: {reason}")]
    SessionAborted { session: u64, reason: String },
    #[error("transcript of session {session} is missing a {kind} frame")]
    MissingFrame { session: u64, kind: &'static str },
    #[error("{phase} produced no candidates on an honest transcript")]
    EmptyCandidates { phase: &'static str },
    #[error("{phase} exceeded the search time budget")]
    Timeout { phase: &'static str },
}

/// Wall-clock budget for the offset searches. The searches are polynomial
/// (at most L^2 or L^3 equation checks) but a budget guards campaign runs
/// against pathological blowups; exceeding it fails the trial.
#[derive(Clone, Copy, Debug, Default)]
pub struct SearchBudget {
    deadline: Option<Instant>,
}

impl SearchBudget {
    pub fn unlimited() -> Self {
        SearchBudget { deadline: None }
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        SearchBudget {
            deadline: Some(Instant::now() + timeout),
        }
    }

    fn check(&self, phase: &'static str) -> Result<(), AttackError> {
        match self.deadline {
            Some(deadline) if Instant::now() > deadline => {
                Err(AttackError::Timeout { phase })
            }
            _ => Ok(()),
        }
    }
}
