//! The guessing-game protocol.
//!
//! ```text
//!  AwaitingDescription --submit_description--> AwaitingJudgment
//!          ^                                        |
//!          \-------- judge(incorrect, < cap) -------+--> Won  (judge correct)
//!                                                   \--> Lost (judge incorrect at cap)
//! ```
//!
//! Each description is appended to the accumulated query, embedded, blended
//! with the anchor embedding (the initial reference unless rebasing is
//! enabled) and matched against the store. The human's judgment is
//! authoritative; the engine never peeks at the target.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, EmbeddingBackend};
use crate::catalog::{Catalog, EmbeddingStore, FibreCategory, TextileId};
use crate::rng::{shuffle, SplitMix64};
use crate::vector::{blend, cosine, top_k, VectorError};

/// Sentence inserted between the previous query and each new description.
pub const BRIDGE_SENTENCE: &str =
    "You were asked to guess with the following additional information because your previous answer was wrong.";

pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 10;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("operation not allowed in state {actual:?}")]
    WrongState { actual: SessionState },
    #[error("unknown textile id {0}")]
    UnknownId(TextileId),
    #[error("target and reference must differ (both {0})")]
    SelfPair(TextileId),
    #[error("description is empty")]
    EmptyDescription,
    #[error("attempt cap of {0} reached")]
    AttemptCap(u32),
    #[error("ratings are required when the guess is incorrect")]
    RatingsMissing,
    #[error("ratings must not be given for a correct guess")]
    RatingsOnCorrect,
    #[error("rating {0} outside 1..=10")]
    RatingOutOfRange(u8),
    #[error("invalid session config: {0}")]
    Config(&'static str),
    #[error("embedding failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("cannot plan references for target {target}: no {category} sample other than the target")]
    UnsatisfiablePlan { target: TextileId, category: FibreCategory },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionPolicy {
    /// Never guess the initial reference or a previous wrong guess again.
    #[default]
    ReferenceAndPriorGuesses,
    PriorGuessesOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebasePolicy {
    /// Blend every query with the initial reference embedding.
    #[default]
    FixedStart,
    /// Blend with the embedding of the most recent wrong guess.
    RebaseToLastGuess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_attempts: u32,
    pub k: usize,
    pub exclusion_policy: ExclusionPolicy,
    pub rebase_policy: RebasePolicy,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            k: 1,
            exclusion_policy: ExclusionPolicy::default(),
            rebase_policy: RebasePolicy::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        if self.max_attempts == 0 {
            return Err(GameError::Config("max_attempts must be at least 1"));
        }
        if self.k == 0 {
            return Err(GameError::Config("k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub target_id: TextileId,
    pub reference_id: TextileId,
}

impl Assignment {
    pub fn new(target_id: TextileId, reference_id: TextileId) -> Result<Self, GameError> {
        if target_id == reference_id {
            return Err(GameError::SelfPair(target_id));
        }
        Ok(Self { target_id, reference_id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Pending,
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 1-based.
    pub index: u32,
    pub new_description: String,
    pub accumulated_query: String,
    /// Store id whose embedding anchored the blend.
    pub anchor_id: TextileId,
    pub predicted_id: TextileId,
    /// Cosine of the blended query against every store entry.
    pub score_snapshot: BTreeMap<TextileId, f64>,
    pub judgment: Judgment,
    /// Recorded only for incorrect guesses.
    pub validity: Option<u8>,
    pub similarity: Option<u8>,
}

impl Attempt {
    /// Validity as used by metrics: a correct guess counts as 10.
    pub fn effective_validity(&self) -> Option<u8> {
        match self.judgment {
            Judgment::Correct => Some(MAX_RATING),
            _ => self.validity,
        }
    }

    pub fn effective_similarity(&self) -> Option<u8> {
        match self.judgment {
            Judgment::Correct => Some(MAX_RATING),
            _ => self.similarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingDescription,
    AwaitingJudgment,
    Won,
    Lost,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Won | SessionState::Lost)
    }
}

/// Result of one [`GameSession::submit_description`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted_id: TextileId,
    pub score_snapshot: BTreeMap<TextileId, f64>,
}

/// Appends `new_description` to `previous`, joined by the bridge sentence.
pub fn accumulate_query(previous: &str, new_description: &str) -> Result<String, GameError> {
    if new_description.trim().is_empty() {
        return Err(GameError::EmptyDescription);
    }
    if previous.is_empty() {
        return Ok(new_description.to_owned());
    }
    Ok(format!("{previous} {BRIDGE_SENTENCE} {new_description}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSession {
    pub session_id: String,
    pub assignment: Assignment,
    /// The sample the human currently holds as reference.
    pub shown_reference_id: TextileId,
    pub attempts: Vec<Attempt>,
    pub state: SessionState,
    pub config: SessionConfig,
}

impl GameSession {
    pub fn start(
        session_id: impl Into<String>,
        assignment: Assignment,
        store: &EmbeddingStore,
        config: SessionConfig,
    ) -> Result<Self, GameError> {
        config.validate()?;
        let Assignment { target_id, reference_id } = assignment;
        if target_id == reference_id {
            return Err(GameError::SelfPair(target_id));
        }
        for id in [target_id, reference_id] {
            if !store.contains(id) {
                return Err(GameError::UnknownId(id));
            }
        }
        Ok(Self {
            session_id: session_id.into(),
            assignment,
            shown_reference_id: reference_id,
            attempts: Vec::new(),
            state: SessionState::AwaitingDescription,
            config,
        })
    }

    pub fn current_query(&self) -> &str {
        self.attempts.last().map_or("", |a| a.accumulated_query.as_str())
    }

    pub fn anchor_id(&self) -> TextileId {
        match (self.config.rebase_policy, self.attempts.last()) {
            (RebasePolicy::RebaseToLastGuess, Some(last)) => last.predicted_id,
            _ => self.assignment.reference_id,
        }
    }

    pub fn excluded_ids(&self) -> BTreeSet<TextileId> {
        let prior = self.attempts.iter().map(|a| a.predicted_id);
        match self.config.exclusion_policy {
            ExclusionPolicy::ReferenceAndPriorGuesses => {
                prior.chain(std::iter::once(self.assignment.reference_id)).collect()
            }
            ExclusionPolicy::PriorGuessesOnly => prior.collect(),
            ExclusionPolicy::None => BTreeSet::new(),
        }
    }

    fn expect_state(&self, expected: SessionState) -> Result<(), GameError> {
        if self.state != expected {
            return Err(GameError::WrongState { actual: self.state });
        }
        Ok(())
    }

    /// Extends the query with `text` and predicts the target. On any error
    /// the session is left untouched.
    pub fn submit_description(
        &mut self,
        text: &str,
        store: &EmbeddingStore,
        backend: &dyn EmbeddingBackend,
    ) -> Result<Prediction, GameError> {
        self.expect_state(SessionState::AwaitingDescription)?;
        if self.attempts.len() >= self.config.max_attempts as usize {
            return Err(GameError::AttemptCap(self.config.max_attempts));
        }
        let accumulated_query = accumulate_query(self.current_query(), text)?;
        let query = backend.embed(&accumulated_query)?;
        let anchor_id = self.anchor_id();
        let anchor = store.get(anchor_id).ok_or(GameError::UnknownId(anchor_id))?;
        let probe = blend(anchor, &query)?;
        let ranking = top_k(&probe, store, self.config.k, &self.excluded_ids())?;
        let predicted_id = ranking[0].id;
        let score_snapshot = store
            .iter()
            .map(|(id, v)| cosine(&probe, v).map(|c| (id, c)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;

        self.attempts.push(Attempt {
            index: self.attempts.len() as u32 + 1,
            new_description: text.to_owned(),
            accumulated_query,
            anchor_id,
            predicted_id,
            score_snapshot: score_snapshot.clone(),
            judgment: Judgment::Pending,
            validity: None,
            similarity: None,
        });
        self.state = SessionState::AwaitingJudgment;
        Ok(Prediction { predicted_id, score_snapshot })
    }

    /// Records the human's verdict on the pending guess.
    pub fn judge(&mut self, correct: bool, validity: Option<u8>, similarity: Option<u8>) -> Result<SessionState, GameError> {
        self.expect_state(SessionState::AwaitingJudgment)?;
        if correct {
            if validity.is_some() || similarity.is_some() {
                return Err(GameError::RatingsOnCorrect);
            }
        } else {
            let (Some(v), Some(s)) = (validity, similarity) else {
                return Err(GameError::RatingsMissing);
            };
            for r in [v, s] {
                if !(MIN_RATING..=MAX_RATING).contains(&r) {
                    return Err(GameError::RatingOutOfRange(r));
                }
            }
        }

        let cap = self.config.max_attempts as usize;
        let attempt = self.attempts.last_mut().expect("awaiting judgment implies an attempt");
        if correct {
            attempt.judgment = Judgment::Correct;
            self.state = SessionState::Won;
        } else {
            attempt.judgment = Judgment::Incorrect;
            attempt.validity = validity;
            attempt.similarity = similarity;
            self.shown_reference_id = attempt.predicted_id;
            self.state = if self.attempts.len() >= cap {
                SessionState::Lost
            } else {
                SessionState::AwaitingDescription
            };
        }
        Ok(self.state)
    }
}

/// Ordered (target, reference) pairs for a study run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub seed: u64,
    pub pairs: Vec<Assignment>,
}

impl AssignmentPlan {
    /// Checks the balance rules against `catalog`: four appearances as
    /// target per sample, references spanning all four categories, no
    /// self-pairs.
    pub fn check(&self, catalog: &Catalog) -> Result<(), String> {
        let mut refs: BTreeMap<TextileId, Vec<FibreCategory>> = BTreeMap::new();
        for pair in &self.pairs {
            if pair.target_id == pair.reference_id {
                return Err(format!("self pair on {}", pair.target_id));
            }
            let reference = catalog.get(pair.reference_id).ok_or(format!("unknown reference {}", pair.reference_id))?;
            if !catalog.contains(pair.target_id) {
                return Err(format!("unknown target {}", pair.target_id));
            }
            refs.entry(pair.target_id).or_default().push(reference.fibre_category);
        }
        for id in catalog.ids() {
            let mut cats = refs.remove(&id).unwrap_or_default();
            cats.sort();
            if cats != FibreCategory::ALL {
                return Err(format!("target {id} has reference categories {cats:?}"));
            }
        }
        Ok(())
    }
}

/// Draws, for every sample, one reference from each fibre category (never
/// the sample itself), then shuffles all pairs. Deterministic in `seed`.
pub fn plan_assignments(catalog: &Catalog, seed: u64) -> Result<AssignmentPlan, GameError> {
    let mut rng = SplitMix64::new(seed);
    let mut pairs = Vec::with_capacity(catalog.len() * FibreCategory::ALL.len());
    for target in catalog.samples() {
        for category in FibreCategory::ALL {
            let candidates: Vec<TextileId> =
                catalog.in_category(category).map(|s| s.id).filter(|id| *id != target.id).collect();
            if candidates.is_empty() {
                return Err(GameError::UnsatisfiablePlan { target: target.id, category });
            }
            let reference_id = candidates[rng.next_index(candidates.len())];
            pairs.push(Assignment { target_id: target.id, reference_id });
        }
    }
    shuffle(&mut pairs, &mut rng);
    Ok(AssignmentPlan { seed, pairs })
}
