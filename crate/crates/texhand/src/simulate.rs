//! Batch play against a scripted participant.
//!
//! At every attempt the oracle describes the target with its rendered
//! catalog description, optionally degraded. Judgments compare the guess to
//! the assignment's target. Wrong guesses get synthetic ratings
//! `round(1 + 9·(cos(guess, target) + 1)/2)` from the store vectors, used
//! for both validity and similarity.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use texhand_core::game::{MAX_RATING, MIN_RATING};
use texhand_core::rng::{fnv1a64, SplitMix64};
use texhand_core::{
    cosine, render_description, AssignmentPlan, Catalog, EmbeddingBackend, EmbeddingStore, EndOutcome, GameError,
    GameSession, LogEvent, SessionConfig, SessionLog, TaskRecord, TextileId,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid oracle strategy: {0}")]
    Strategy(String),
    #[error("plan pair {index}: {reason}")]
    Plan { index: usize, reason: String },
    #[error("session log write failed: {0}")]
    Log(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// The full rendered description.
    Verbatim,
    /// The first `ceil(param · n)` words.
    Truncate,
    /// Each word dropped independently with probability `param`.
    TokenDropout,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Verbatim => "verbatim",
            OracleKind::Truncate => "truncate",
            OracleKind::TokenDropout => "token_dropout",
        })
    }
}

impl FromStr for OracleKind {
    type Err = SimulateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "verbatim" => Ok(OracleKind::Verbatim),
            "truncate" => Ok(OracleKind::Truncate),
            "token_dropout" => Ok(OracleKind::TokenDropout),
            _ => Err(SimulateError::Strategy(format!("unknown kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleStrategy {
    pub kind: OracleKind,
    pub param: f64,
    pub seed: u64,
}

impl OracleStrategy {
    pub fn new(kind: OracleKind, param: f64, seed: u64) -> Result<Self, SimulateError> {
        if !(0.0..=1.0).contains(&param) {
            return Err(SimulateError::Strategy(format!("param {param} outside [0, 1]")));
        }
        Ok(Self { kind, param, seed })
    }

    pub fn verbatim() -> Self {
        Self { kind: OracleKind::Verbatim, param: 1.0, seed: 0 }
    }

    /// The oracle's words for `task` (0-based plan position) at `attempt`
    /// (1-based). May be empty for degenerate parameters.
    pub fn describe(&self, description: &str, task: usize, attempt: u32) -> String {
        let words: Vec<&str> = description.split_whitespace().collect();
        match self.kind {
            OracleKind::Verbatim => description.to_owned(),
            OracleKind::Truncate => {
                let keep = (self.param * words.len() as f64).ceil() as usize;
                words[..keep.min(words.len())].join(" ")
            }
            OracleKind::TokenDropout => {
                let mut rng = SplitMix64::new(self.seed ^ fnv1a64(format!("{task}:{attempt}").as_bytes()));
                words.into_iter().filter(|_| rng.next_unit() >= self.param).collect::<Vec<_>>().join(" ")
            }
        }
    }
}

/// Synthetic 1–10 rating for guessing `guess` when the target was `target`.
pub fn synthetic_rating(store: &EmbeddingStore, guess: TextileId, target: TextileId) -> Option<u8> {
    let c = cosine(store.get(guess)?, store.get(target)?).ok()?;
    let r = (1.0 + 9.0 * (c + 1.0) / 2.0).round();
    Some(r.clamp(f64::from(MIN_RATING), f64::from(MAX_RATING)) as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskFailure {
    pub session_id: String,
    pub target_id: TextileId,
    pub reference_id: TextileId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SimulationRun {
    pub records: Vec<TaskRecord>,
    pub failures: Vec<TaskFailure>,
}

pub struct Simulation<'a> {
    pub catalog: &'a Catalog,
    pub store: &'a EmbeddingStore,
    pub backend: &'a dyn EmbeddingBackend,
    pub config: SessionConfig,
}

impl Simulation<'_> {
    /// Plays every pair of `plan` to the end, in order. A task whose engine
    /// call fails is logged with outcome `error` and skipped.
    pub fn run(&self, plan: &AssignmentPlan, strategy: &OracleStrategy, log: &SessionLog) -> Result<SimulationRun, SimulateError> {
        self.config.validate().map_err(|e| SimulateError::Strategy(e.to_string()))?;
        let mut descriptions = Vec::with_capacity(plan.pairs.len());
        for (index, pair) in plan.pairs.iter().enumerate() {
            let plan_err = |reason: String| SimulateError::Plan { index, reason };
            if pair.target_id == pair.reference_id {
                return Err(plan_err(format!("target and reference are both {}", pair.target_id)));
            }
            let sample = self.catalog.get(pair.target_id).ok_or_else(|| plan_err(format!("unknown target {}", pair.target_id)))?;
            for id in [pair.target_id, pair.reference_id] {
                if !self.store.contains(id) {
                    return Err(plan_err(format!("{id} missing from the embedding store")));
                }
            }
            descriptions.push(render_description(sample).map_err(|e| plan_err(e.to_string()))?);
        }

        let mut run = SimulationRun::default();
        for (task, (pair, description)) in plan.pairs.iter().zip(&descriptions).enumerate() {
            let session_id = format!("sim-{}-{}", plan.seed, task + 1);
            let mut session = GameSession::start(&session_id, *pair, self.store, self.config)
                .map_err(|e| SimulateError::Plan { index: task, reason: e.to_string() })?;
            log.append(&LogEvent::started(&session, true))?;
            match self.play(&mut session, description, strategy, task, log)? {
                Ok(()) => run.records.extend(TaskRecord::from_session(&session)),
                Err(e) => {
                    log.append(&LogEvent::ended(&session_id, EndOutcome::Error, Some(e.to_string())))?;
                    run.failures.push(TaskFailure {
                        session_id,
                        target_id: pair.target_id,
                        reference_id: pair.reference_id,
                        error: e.to_string(),
                    });
                }
            }
        }
        log.flush()?;
        Ok(run)
    }

    /// Inner `Err` is a task failure; outer `Err` a log failure.
    fn play(
        &self,
        session: &mut GameSession,
        description: &str,
        strategy: &OracleStrategy,
        task: usize,
        log: &SessionLog,
    ) -> Result<Result<(), GameError>, SimulateError> {
        let target = session.assignment.target_id;
        while !session.state.is_terminal() {
            let attempt = session.attempts.len() as u32 + 1;
            let text = strategy.describe(description, task, attempt);
            let predicted = match session.submit_description(&text, self.store, self.backend) {
                Ok(p) => p.predicted_id,
                Err(e) => return Ok(Err(e)),
            };
            log.append(&LogEvent::attempted(session))?;
            let verdict = if predicted == target {
                session.judge(true, None, None)
            } else {
                let r = synthetic_rating(self.store, predicted, target);
                session.judge(false, r, r)
            };
            if let Err(e) = verdict {
                return Ok(Err(e));
            }
            log.append(&LogEvent::judged(session))?;
        }
        Ok(Ok(()))
    }
}
