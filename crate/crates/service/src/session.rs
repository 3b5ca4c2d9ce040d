use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clinrag::{Query, SoapCase};

/// A case frozen at lock time together with its query embedding.
#[derive(Debug, Clone)]
pub struct LockedSession {
    pub session_id: String,
    pub case: SoapCase,
    pub query: Query,
    pub created_at: Instant,
}

/// In-memory sessions; each expires `ttl` after creation.
#[derive(Debug)]
pub struct SessionStore {
    ttl: Duration,
    inner: Mutex<HashMap<String, LockedSession>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            inner: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Insert and sweep expired entries under one lock.
    pub fn insert(&self, session: LockedSession) {
        let now = Instant::now();
        let mut map = self.inner.lock().expect("session lock poisoned");
        map.retain(|_, s| now.duration_since(s.created_at) < self.ttl);
        map.insert(session.session_id.clone(), session);
    }

    /// Clone of a live session; an expired one is removed and reported missing.
    pub fn get(&self, id: &str) -> Option<LockedSession> {
        let mut map = self.inner.lock().expect("session lock poisoned");
        match map.get(id) {
            Some(s) if s.created_at.elapsed() < self.ttl => Some(s.clone()),
            Some(_) => {
                map.remove(id);
                None
            }
            None => None,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("session lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
