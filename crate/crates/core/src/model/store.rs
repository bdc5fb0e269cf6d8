use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;

use super::session::{ConfigError, SessionConfig, SessionState};

/// One session behind its own lock: writers are serialized, readers share a
/// consistent snapshot.
pub type SharedSession = Arc<RwLock<SessionState>>;

/// Creates a standalone session with a fresh random identifier.
pub fn create_session(config: SessionConfig) -> Result<SessionState, ConfigError> {
    SessionState::new(uuid::Uuid::new_v4().simple().to_string(), config)
}

/// Registry of live sessions. Sessions never share mutable state.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SharedSession>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, config: SessionConfig) -> Result<SharedSession, ConfigError> {
        let state = create_session(config)?;
        Ok(self.insert(state))
    }

    /// Registers an existing session (for example one restored from disk).
    /// An existing entry with the same id is replaced.
    pub fn insert(&self, state: SessionState) -> SharedSession {
        let id = state.id().to_string();
        let shared = Arc::new(RwLock::new(state));
        self.sessions.write().insert(id, Arc::clone(&shared));
        shared
    }

    pub fn get(&self, id: &str) -> Option<SharedSession> {
        self.sessions.read().get(id).cloned()
    }

    /// Discards the session. Returns false when it did not exist.
    pub fn remove(&self, id: &str) -> bool {
        self.sessions.write().remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
