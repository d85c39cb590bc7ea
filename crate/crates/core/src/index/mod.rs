//! Per-user in-memory vector collections with exhaustive cosine search.
//!
//! The index is not persisted; after a restart it is rebuilt from stored
//! metadata by the rehydrator.

pub mod embed;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{Embedder, Embedding, EmbedError, HashingEmbedder, RemoteEmbedder};

use crate::store::ArtifactRecord;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEntry {
    pub artifact_id: String,
    pub embedding: Embedding,
    pub summary_text: String,
    pub plot_type: String,
    pub keywords: Vec<String>,
    pub title: String,
    pub numeric_facts: BTreeMap<String, f64>,
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub entry: VectorEntry,
    pub score: f64,
}

/// The text that gets embedded for a record: summary plus keywords.
pub fn retrieval_text(record: &ArtifactRecord) -> String {
    let mut text = record.summary_for_rag.text.clone();
    for kw in &record.summary_for_rag.keywords {
        text.push(' ');
        text.push_str(kw);
    }
    text
}

type Collection = Arc<RwLock<BTreeMap<String, VectorEntry>>>;

pub struct VectorIndex {
    embedder: Arc<dyn Embedder>,
    users: RwLock<HashMap<String, Collection>>,
}

impl VectorIndex {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self { embedder, users: RwLock::new(HashMap::new()) }
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    fn collection(&self, user_id: &str) -> Option<Collection> {
        self.users.read().get(user_id).cloned()
    }

    fn collection_or_create(&self, user_id: &str) -> Collection {
        if let Some(c) = self.collection(user_id) {
            return c;
        }
        self.users.write().entry(user_id.to_string()).or_default().clone()
    }

    pub fn entry_from_record(&self, record: &ArtifactRecord) -> Result<VectorEntry, IndexError> {
        let embedding = self.embedder.embed(&retrieval_text(record))?;
        Ok(VectorEntry {
            artifact_id: record.artifact_id.clone(),
            embedding,
            summary_text: record.summary_for_rag.text.clone(),
            plot_type: record.plot_type.clone(),
            keywords: record.summary_for_rag.keywords.clone(),
            title: record.title.clone(),
            numeric_facts: record.summary_for_rag.numeric_facts.clone(),
            sample_id: record.provenance.sample_id.clone(),
        })
    }

    /// Insert or replace by artifact id.
    pub fn upsert(&self, user_id: &str, entry: VectorEntry) -> Result<(), IndexError> {
        let expected = self.embedder.dimension();
        if entry.embedding.dim() != expected {
            return Err(IndexError::DimensionMismatch { expected, got: entry.embedding.dim() });
        }
        let coll = self.collection_or_create(user_id);
        coll.write().insert(entry.artifact_id.clone(), entry);
        Ok(())
    }

    /// Upsert many entries under a single lock acquisition.
    pub fn upsert_all(&self, user_id: &str, entries: Vec<VectorEntry>) -> Result<(), IndexError> {
        let expected = self.embedder.dimension();
        if let Some(bad) = entries.iter().find(|e| e.embedding.dim() != expected) {
            return Err(IndexError::DimensionMismatch { expected, got: bad.embedding.dim() });
        }
        let coll = self.collection_or_create(user_id);
        let mut guard = coll.write();
        for e in entries {
            guard.insert(e.artifact_id.clone(), e);
        }
        Ok(())
    }

    pub fn index_record(&self, user_id: &str, record: &ArtifactRecord) -> Result<(), IndexError> {
        let entry = self.entry_from_record(record)?;
        self.upsert(user_id, entry)
    }

    pub fn search(&self, user_id: &str, query: &str, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_filtered(user_id, query, k, None)
    }

    /// Top-k by cosine similarity, descending; ties by artifact id ascending.
    /// A query that embeds to the zero vector matches nothing.
    pub fn search_filtered(
        &self,
        user_id: &str,
        query: &str,
        k: usize,
        plot_type: Option<&str>,
    ) -> Result<Vec<SearchHit>, IndexError> {
        let Some(coll) = self.collection(user_id) else {
            return Ok(Vec::new());
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed(query)?;
        if q.is_zero() {
            return Ok(Vec::new());
        }
        let guard = coll.read();
        // BTreeMap iteration is id-ascending, so a stable sort keeps the tie order.
        let mut scored: Vec<(&VectorEntry, f64)> = guard
            .values()
            .filter(|e| plot_type.is_none_or(|p| e.plot_type == p))
            .map(|e| (e, q.cosine(&e.embedding)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(e, score)| SearchHit { entry: e.clone(), score })
            .collect())
    }

    pub fn collection_size(&self, user_id: &str) -> usize {
        self.collection(user_id).map_or(0, |c| c.read().len())
    }

    pub fn clear(&self, user_id: &str) {
        if let Some(c) = self.collection(user_id) {
            c.write().clear();
        }
    }

    /// Sizes of all non-empty collections.
    pub fn sizes(&self) -> BTreeMap<String, usize> {
        self.users
            .read()
            .iter()
            .map(|(u, c)| (u.clone(), c.read().len()))
            .filter(|(_, n)| *n > 0)
            .collect()
    }
}
