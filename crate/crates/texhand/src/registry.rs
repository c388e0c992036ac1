//! Live sessions behind the HTTP service, wired to the session log.
//!
//! A transition is applied to a copy of the session, written to the log,
//! and only then committed, so the registry never holds a state the log
//! does not record. Rejected transitions touch neither.

use std::collections::HashMap;
use std::io;
use std::sync::{Arc, Mutex, RwLock};

use texhand_core::{
    Assignment, Catalog, ConfusionMode, EmbeddingBackend, EmbeddingStore, EndOutcome, GameError, GameSession,
    LogEvent, MetricsError, MetricsReport, Replay, SessionConfig, SessionLog, SessionState, TaskRecord, TextileId,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("no session {0}")]
    NotFound(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("session log write failed: {0}")]
    Log(#[from] io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Outcome of a description submission.
#[derive(Debug, Clone)]
pub struct Described {
    pub predicted_id: TextileId,
    pub attempt_index: u32,
    pub state: SessionState,
}

pub struct SessionRegistry {
    catalog: Arc<Catalog>,
    store: Arc<EmbeddingStore>,
    backend: Arc<dyn EmbeddingBackend>,
    config: SessionConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<GameSession>>>>,
    log: SessionLog,
    completed: Mutex<Vec<TaskRecord>>,
    synthetic: Mutex<bool>,
}

impl SessionRegistry {
    pub fn new(
        catalog: Arc<Catalog>,
        store: Arc<EmbeddingStore>,
        backend: Arc<dyn EmbeddingBackend>,
        config: SessionConfig,
        log: SessionLog,
    ) -> Self {
        Self {
            catalog,
            store,
            backend,
            config,
            sessions: RwLock::new(HashMap::new()),
            log,
            completed: Mutex::new(Vec::new()),
            synthetic: Mutex::new(false),
        }
    }

    /// Seeds the live metrics with tasks already recorded in the log.
    pub fn with_history(self, history: Replay) -> Self {
        *self.synthetic.lock().unwrap() = history.synthetic;
        *self.completed.lock().unwrap() = history.records;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<GameSession>>, RegistryError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(id.to_owned()))
    }

    pub fn start(&self, assignment: Assignment) -> Result<GameSession, RegistryError> {
        let id = uuid::Uuid::new_v4().to_string();
        let session = GameSession::start(id.clone(), assignment, &self.store, self.config)?;
        let mut sessions = self.sessions.write().unwrap();
        self.log.append(&LogEvent::started(&session, false))?;
        sessions.insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    /// Embeds and predicts; blocks on the backend while holding only this
    /// session's lock.
    pub fn describe(&self, id: &str, text: &str) -> Result<Described, RegistryError> {
        let handle = self.lookup(id)?;
        let mut session = handle.lock().unwrap();
        let mut next = session.clone();
        let prediction = next.submit_description(text, &self.store, self.backend.as_ref())?;
        self.log.append(&LogEvent::attempted(&next))?;
        *session = next;
        Ok(Described {
            predicted_id: prediction.predicted_id,
            attempt_index: session.attempts.len() as u32,
            state: session.state,
        })
    }

    pub fn judge(
        &self,
        id: &str,
        correct: bool,
        validity: Option<u8>,
        similarity: Option<u8>,
    ) -> Result<GameSession, RegistryError> {
        let handle = self.lookup(id)?;
        let mut session = handle.lock().unwrap();
        let mut next = session.clone();
        let state = next.judge(correct, validity, similarity)?;
        let mut completed = self.completed.lock().unwrap();
        self.log.append(&LogEvent::judged(&next))?;
        if state.is_terminal() {
            completed.extend(TaskRecord::from_session(&next));
        }
        *session = next;
        Ok(session.clone())
    }

    pub fn get(&self, id: &str) -> Result<GameSession, RegistryError> {
        Ok(self.lookup(id)?.lock().unwrap().clone())
    }

    pub fn completed(&self) -> Vec<TaskRecord> {
        self.completed.lock().unwrap().clone()
    }

    /// Report over every finished task, `None` before the first one.
    pub fn report(&self, mode: ConfusionMode) -> Result<Option<MetricsReport>, RegistryError> {
        let records = self.completed();
        if records.is_empty() {
            return Ok(None);
        }
        let synthetic = *self.synthetic.lock().unwrap();
        Ok(Some(MetricsReport::build(&records, &self.catalog, mode, synthetic)?))
    }

    /// Logs every unfinished session as abandoned and flushes the log.
    /// Returns how many were abandoned.
    pub fn shutdown(&self) -> io::Result<usize> {
        let mut sessions = self.sessions.write().unwrap();
        let mut abandoned = 0;
        let mut ids: Vec<&String> = sessions.keys().collect();
        ids.sort();
        for id in ids {
            let session = sessions[id].lock().unwrap();
            if !session.state.is_terminal() {
                self.log.append(&LogEvent::ended(id, EndOutcome::Abandoned, None))?;
                abandoned += 1;
            }
        }
        sessions.clear();
        self.log.flush()?;
        Ok(abandoned)
    }
}
