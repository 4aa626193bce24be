use std::cmp::Ordering;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, Embedder, EmbeddingVector};
use crate::fixtures::{read_json, FixtureError};

pub const DEFAULT_RETRIEVAL_K: usize = 5;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryEntry {
    pub entry_id: u64,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    #[serde(skip)]
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredMemory {
    pub entry: MemoryEntry,
    pub score: f64,
}

/// One record of the `memories.json` seed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySeed {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MemorySeedFile {
    pub memories: Vec<MemorySeed>,
}

/// Highest score first, then most recent, then highest entry id.
pub fn rank_order(a: &ScoredMemory, b: &ScoredMemory) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.entry.timestamp.cmp(&a.entry.timestamp))
        .then_with(|| b.entry.entry_id.cmp(&a.entry.entry_id))
}

/// Append-only long-term memory with exact cosine retrieval.
pub struct MemoryStore {
    embedder: Arc<dyn Embedder>,
    entries: RwLock<Vec<MemoryEntry>>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("entries", &self.entries.read().len())
            .finish()
    }
}

impl MemoryStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            entries: RwLock::new(Vec::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn add(&self, user_id: &str, text: &str) -> Result<u64, MemoryError> {
        self.add_at(user_id, text, Utc::now())
    }

    pub fn add_at(
        &self,
        user_id: &str,
        text: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<u64, MemoryError> {
        if text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let embedding = self.embedder.embed(text);
        Ok(self.insert(user_id, text, timestamp, embedding))
    }

    /// Inserts with a caller-supplied embedding.
    pub fn add_embedded(
        &self,
        user_id: &str,
        text: &str,
        timestamp: DateTime<Utc>,
        embedding: EmbeddingVector,
    ) -> u64 {
        self.insert(user_id, text, timestamp, embedding)
    }

    fn insert(
        &self,
        user_id: &str,
        text: &str,
        timestamp: DateTime<Utc>,
        embedding: EmbeddingVector,
    ) -> u64 {
        let mut entries = self.entries.write();
        let entry_id = self.next_id.fetch_add(1, AtomicOrdering::SeqCst);
        entries.push(MemoryEntry {
            entry_id,
            user_id: user_id.into(),
            timestamp,
            text: text.into(),
            embedding,
        });
        entry_id
    }

    pub fn seed(&self, seeds: &[MemorySeed]) -> Result<(), MemoryError> {
        for s in seeds {
            self.add_at(&s.user_id, &s.text, s.timestamp)?;
        }
        Ok(())
    }

    pub fn load_seed_file(&self, path: impl AsRef<Path>) -> Result<usize, FixtureError> {
        let file: MemorySeedFile = read_json(path)?;
        self.seed(&file.memories)
            .map_err(|e| FixtureError::Invalid(e.to_string()))?;
        Ok(file.memories.len())
    }

    pub fn retrieve(
        &self,
        user_id: &str,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredMemory>, MemoryError> {
        let q = self.embedder.embed(query);
        self.retrieve_by_vector(user_id, &q, k)
    }

    pub fn retrieve_by_vector(
        &self,
        user_id: &str,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredMemory>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidK);
        }
        let entries = self.entries.read();
        let mut scored: Vec<ScoredMemory> = entries
            .iter()
            .filter(|e| e.user_id == user_id)
            .map(|e| ScoredMemory {
                score: cosine_similarity(query, &e.embedding),
                entry: e.clone(),
            })
            .collect();
        drop(entries);
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }

    /// Entries of one user in insertion order.
    pub fn entries_for(&self, user_id: &str) -> Vec<MemoryEntry> {
        self.entries
            .read()
            .iter()
            .filter(|e| e.user_id == user_id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_empty_for(&self, user_id: &str) -> bool {
        !self.entries.read().iter().any(|e| e.user_id == user_id)
    }

    /// Drops every entry and restarts id numbering.
    pub fn clear(&self) {
        let mut entries = self.entries.write();
        entries.clear();
        self.next_id.store(1, AtomicOrdering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use chrono::TimeZone;

    fn store() -> MemoryStore {
        MemoryStore::new(Arc::new(HashingEmbedder::default()))
    }

    #[test]
    fn fan_memory_ranks_first_for_team_query() {
        let s = store();
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 12, 0, 0).unwrap();
        s.add_at("u", "I'm a Raptors fan, my favorite basketball team", t).unwrap();
        s.add_at("u", "I like spicy food for dinner", t).unwrap();
        s.add_at("u", "set my alarm for 7 am", t).unwrap();
        let hits = s.retrieve("u", "favorite basketball team", 3).unwrap();
        assert!(hits[0].entry.text.contains("Raptors"));
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn edge_cases() {
        let s = store();
        assert!(s.retrieve("u", "x", 5).unwrap().is_empty());
        assert_eq!(s.retrieve("u", "x", 0), Err(MemoryError::InvalidK));
        assert_eq!(s.add("u", "  "), Err(MemoryError::EmptyText));
        let a = s.add("u", "same").unwrap();
        let b = s.add("u", "same").unwrap();
        assert_ne!(a, b);
        assert_eq!(s.retrieve("u", "same", 10).unwrap().len(), 2);
    }

    #[test]
    fn ties_prefer_recent_then_higher_id() {
        let s = store();
        let early = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let late = Utc.with_ymd_and_hms(2024, 1, 2, 0, 0, 0).unwrap();
        let old = s.add_at("u", "tv", early).unwrap();
        let new = s.add_at("u", "tv", late).unwrap();
        let newest_id = s.add_at("u", "tv", late).unwrap();
        let ids: Vec<u64> = s
            .retrieve("u", "tv", 3)
            .unwrap()
            .into_iter()
            .map(|m| m.entry.entry_id)
            .collect();
        assert_eq!(ids, vec![newest_id, new, old]);
    }

    #[test]
    fn users_are_isolated() {
        let s = store();
        s.add("alice", "Raptors fan").unwrap();
        s.add("bob", "Celtics fan").unwrap();
        let hits = s.retrieve("alice", "fan", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entry.user_id, "alice");
        assert!(s.is_empty_for("carol"));
    }
}
