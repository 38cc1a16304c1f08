use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    Session,
    Query,
    Ai,
}

impl Namespace {
    pub fn of(key: &str) -> Option<Self> {
        let (ns, rest) = key.split_once(':')?;
        if rest.is_empty() {
            return None;
        }
        match ns {
            "session" => Some(Namespace::Session),
            "query" => Some(Namespace::Query),
            "ai" => Some(Namespace::Ai),
            _ => None,
        }
    }
}

/// Default lifetimes in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheTtls {
    pub session: i64,
    pub query: i64,
    pub ai: i64,
}

impl Default for CacheTtls {
    fn default() -> Self {
        Self {
            session: 30 * 60,
            query: 60,
            ai: 300,
        }
    }
}

impl CacheTtls {
    pub fn for_namespace(&self, ns: Namespace) -> i64 {
        match ns {
            Namespace::Session => self.session,
            Namespace::Query => self.query,
            Namespace::Ai => self.ai,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub value: Vec<u8>,
    pub ttl: i64,
    pub inserted_at: i64,
}

impl CacheEntry {
    fn fresh_at(&self, now: i64) -> bool {
        now < self.inserted_at + self.ttl
    }
}

pub struct TtlCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
    ttls: CacheTtls,
    clock: Arc<dyn Clock>,
}

impl TtlCache {
    pub fn new(clock: Arc<dyn Clock>, ttls: CacheTtls) -> Self {
        Self {
            entries: RwLock::default(),
            ttls,
            clock,
        }
    }

    pub fn ttls(&self) -> CacheTtls {
        self.ttls
    }

    /// Value for `key` if it is still fresh.
    pub fn get(&self, key: &str) -> Option<Vec<u8>> {
        let now = self.clock.now();
        let entries = self.entries.read().unwrap();
        entries.get(key).filter(|e| e.fresh_at(now)).map(|e| e.value.clone())
    }

    /// Stores or overwrites `key`. Keys must carry a known namespace prefix.
    pub fn put(&self, key: &str, value: Vec<u8>, ttl: i64) -> Result<()> {
        if Namespace::of(key).is_none() {
            return Err(Error::field("key", "must start with session:, query: or ai:"));
        }
        if ttl <= 0 {
            return Err(Error::field("ttl", "must be positive"));
        }
        let entry = CacheEntry {
            key: key.to_owned(),
            value,
            ttl,
            inserted_at: self.clock.now(),
        };
        let mut entries = self.entries.write().unwrap();
        if entries.len() > 10_000 {
            let now = entry.inserted_at;
            entries.retain(|_, e| e.fresh_at(now));
        }
        entries.insert(key.to_owned(), entry);
        Ok(())
    }

    /// `put` with the namespace's default lifetime.
    pub fn put_default(&self, key: &str, value: Vec<u8>) -> Result<()> {
        let ns = Namespace::of(key).ok_or_else(|| Error::field("key", "unknown cache namespace"))?;
        self.put(key, value, self.ttls.for_namespace(ns))
    }

    pub fn invalidate(&self, key: &str) -> bool {
        self.entries.write().unwrap().remove(key).is_some()
    }

    pub fn invalidate_prefix(&self, prefix: &str) -> usize {
        let mut entries = self.entries.write().unwrap();
        let before = entries.len();
        entries.retain(|k, _| !k.starts_with(prefix));
        before - entries.len()
    }

    /// Drops every derived value for a patient after its record changed.
    pub fn invalidate_patient(&self, patient: &str) -> usize {
        usize::from(self.invalidate(&summary_key(patient))) + self.invalidate_prefix(&format!("query:{patient}:"))
    }
}

pub fn summary_key(patient: &str) -> String {
    format!("ai:sum:{patient}")
}
