//! Embedding-based guessing engine for the "Guess What Textile?" game.
//!
//! A human handles a hidden target textile next to a reference textile the
//! system knows, and describes the difference. The engine embeds the
//! accumulated description, blends it with the reference embedding and
//! returns the nearest catalog item. Everything needed to measure how well
//! those guesses line up with human perception lives here as well: session
//! logs, success rates, rating statistics, confusion matrices, and a corpus
//! scanner for sensory vocabulary.

pub mod backend;
pub mod catalog;
pub mod corpus;
pub mod game;
pub mod metrics;
pub mod rng;
pub mod session_log;
pub mod vector;

pub use backend::{BackendConfig, BackendError, BackendKind, EmbeddingBackend, MockBackend, RemoteBackend};
pub use catalog::{
    build_embedding_store, load_catalog, render_description, Catalog, CatalogError, EmbeddingStore,
    FibreCategory, StoreError, TemplateFields, TextileId, TextileSample,
};
pub use corpus::{builtin_color_keywords, scan, textile_keywords_from, KeywordList, MatchMode, ScanError, ScanResult, Scanner};
pub use game::{
    accumulate_query, plan_assignments, Assignment, AssignmentPlan, Attempt, ExclusionPolicy, GameError,
    GameSession, Judgment, Prediction, RebasePolicy, SessionConfig, SessionState,
};
pub use metrics::{
    attempt_stats, confusion_matrix, export_report, score_stats, success_rate, AttemptRecord, ConfusionMatrix,
    ConfusionMode, MetricsError, MetricsReport, Outcome, TaskRecord,
};
pub use session_log::{replay, replay_file, EndOutcome, LogEvent, Replay, ReplayError, SessionLog};
pub use vector::{blend, cosine, normalize, top_k, RankedMatch, UnitVector, Vector, VectorError};
