use std::collections::HashMap;
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, Instant, SystemTime};

use patchscope_core::SessionState;
use tokio::sync::{Mutex, OwnedMutexGuard, RwLock};

struct SessionEntry {
    created_at: SystemTime,
    last_used: StdMutex<Instant>,
    state: Arc<Mutex<SessionState>>,
}

impl SessionEntry {
    fn touch(&self, now: Instant) {
        *self.last_used.lock().unwrap() = now;
    }

    fn idle_since(&self) -> Instant {
        *self.last_used.lock().unwrap()
    }
}

/// Live sessions keyed by id.
pub struct SessionTable {
    idle_timeout: Duration,
    entries: RwLock<HashMap<String, Arc<SessionEntry>>>,
}

impl SessionTable {
    pub fn new(idle_timeout: Duration) -> Self {
        Self { idle_timeout, entries: RwLock::new(HashMap::new()) }
    }

    pub async fn insert(&self, state: SessionState) -> String {
        let id = state.session_id.clone();
        let entry = SessionEntry {
            created_at: SystemTime::now(),
            last_used: StdMutex::new(Instant::now()),
            state: Arc::new(Mutex::new(state)),
        };
        self.entries.write().await.insert(id.clone(), Arc::new(entry));
        id
    }

    /// Locks a live session for exclusive use. Expired sessions count as
    /// missing.
    pub async fn lock(&self, id: &str) -> Option<OwnedMutexGuard<SessionState>> {
        let entry = self.entries.read().await.get(id).cloned()?;
        let now = Instant::now();
        if now.duration_since(entry.idle_since()) > self.idle_timeout {
            self.entries.write().await.remove(id);
            return None;
        }
        entry.touch(now);
        let guard = entry.state.clone().lock_owned().await;
        entry.touch(Instant::now());
        Some(guard)
    }

    pub async fn created_at(&self, id: &str) -> Option<SystemTime> {
        self.entries.read().await.get(id).map(|e| e.created_at)
    }

    pub async fn len(&self) -> usize {
        self.entries.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }

    /// Removes sessions idle for longer than the timeout; returns how many.
    pub async fn sweep(&self) -> usize {
        self.sweep_at(Instant::now()).await
    }

    pub async fn sweep_at(&self, now: Instant) -> usize {
        let mut entries = self.entries.write().await;
        let before = entries.len();
        entries.retain(|_, e| now.saturating_duration_since(e.idle_since()) <= self.idle_timeout);
        before - entries.len()
    }
}
