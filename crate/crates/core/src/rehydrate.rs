//! Rebuilds an empty per-user vector collection from stored metadata.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use thiserror::Error;

use crate::index::{IndexError, VectorIndex};
use crate::store::{ArtifactStore, StoreError};

#[derive(Debug, Error)]
pub enum RehydrateError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub struct Rehydrator {
    store: ArtifactStore,
    index: Arc<VectorIndex>,
    flights: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    scans: AtomicU64,
}

impl Rehydrator {
    pub fn new(store: ArtifactStore, index: Arc<VectorIndex>) -> Self {
        Self { store, index, flights: Mutex::new(HashMap::new()), scans: AtomicU64::new(0) }
    }

    /// Number of metadata scans performed so far.
    pub fn scan_count(&self) -> u64 {
        self.scans.load(Ordering::SeqCst)
    }

    fn flight(&self, user_id: &str) -> Arc<Mutex<()>> {
        self.flights.lock().entry(user_id.to_string()).or_default().clone()
    }

    /// Populate the user's collection if it is empty. Returns the number of
    /// entries inserted; 0 when the collection was already populated.
    ///
    /// Concurrent callers for the same user wait for a single scan. On any
    /// failure the collection is left empty.
    pub fn rehydrate_if_empty(&self, user_id: &str) -> Result<usize, RehydrateError> {
        if self.index.collection_size(user_id) > 0 {
            return Ok(0);
        }
        let flight = self.flight(user_id);
        let _guard = flight.lock();
        if self.index.collection_size(user_id) > 0 {
            return Ok(0);
        }

        let started = Instant::now();
        self.scans.fetch_add(1, Ordering::SeqCst);
        let result = self
            .store
            .list_metadata(user_id)
            .map_err(RehydrateError::from)
            .and_then(|records| {
                let entries = records
                    .iter()
                    .map(|r| self.index.entry_from_record(r))
                    .collect::<Result<Vec<_>, _>>()?;
                let n = entries.len();
                self.index.upsert_all(user_id, entries)?;
                Ok(n)
            });
        match result {
            Ok(n) => {
                tracing::info!(user = user_id, count = n, elapsed_ms = started.elapsed().as_millis() as u64, "rehydrated");
                Ok(n)
            }
            Err(e) => {
                self.index.clear(user_id);
                tracing::warn!(user = user_id, error = %e, "rehydration failed");
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::HashingEmbedder;
    use crate::store::{ArtifactRecord, Bucket, MemoryBackend, StorageBackend, SummaryForRag};

    fn setup(backend: Arc<dyn StorageBackend>) -> (ArtifactStore, Arc<VectorIndex>, Rehydrator) {
        let store = ArtifactStore::new(backend);
        let index = Arc::new(VectorIndex::new(Arc::new(HashingEmbedder::default())));
        let r = Rehydrator::new(store.clone(), index.clone());
        (store, index, r)
    }

    fn put(store: &ArtifactStore, user: &str, text: &str) -> String {
        let rec = ArtifactRecord {
            user_id: user.into(),
            plot_type: "text_occlusion".into(),
            title: "t".into(),
            summary_for_rag: SummaryForRag { text: text.into(), ..Default::default() },
            ..Default::default()
        };
        store.put_artifact(user, rec, &[]).unwrap()
    }

    #[test]
    fn populates_once() {
        let (store, index, r) = setup(Arc::new(MemoryBackend::default()));
        for i in 0..15 {
            put(&store, "u", &format!("summary {i}"));
        }
        put(&store, "other", "x");
        assert_eq!(r.rehydrate_if_empty("u").unwrap(), 15);
        assert_eq!(index.collection_size("u"), 15);
        assert_eq!(r.rehydrate_if_empty("u").unwrap(), 0);
        assert_eq!(r.scan_count(), 1);
        assert_eq!(index.collection_size("other"), 0);
    }

    #[test]
    fn empty_store_gives_zero() {
        let (_, index, r) = setup(Arc::new(MemoryBackend::default()));
        assert_eq!(r.rehydrate_if_empty("u").unwrap(), 0);
        assert_eq!(index.collection_size("u"), 0);
    }

    #[test]
    fn concurrent_first_queries_scan_once() {
        let (store, index, r) = setup(Arc::new(MemoryBackend::default()));
        for i in 0..40 {
            put(&store, "u", &format!("summary {i}"));
        }
        let r = Arc::new(r);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let r = r.clone();
                std::thread::spawn(move || r.rehydrate_if_empty("u").unwrap())
            })
            .collect();
        let total: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(total, 40);
        assert_eq!(r.scan_count(), 1);
        assert_eq!(index.collection_size("u"), 40);
    }

    struct Corrupting(MemoryBackend);

    impl StorageBackend for Corrupting {
        fn name(&self) -> &str {
            "corrupting"
        }
        fn put(&self, bucket: Bucket, key: &str, data: &[u8]) -> Result<(), StoreError> {
            self.0.put(bucket, key, data)
        }
        fn get(&self, bucket: Bucket, key: &str) -> Result<Vec<u8>, StoreError> {
            if key.ends_with(".json") && self.0.list(bucket, "").unwrap().last().map(String::as_str) == Some(key) {
                return Err(StoreError::BackendUnavailable("injected".into()));
            }
            self.0.get(bucket, key)
        }
        fn list(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError> {
            self.0.list(bucket, prefix)
        }
        fn check(&self) -> Result<(), StoreError> {
            Ok(())
        }
    }

    #[test]
    fn failure_leaves_collection_empty() {
        let (store, index, r) = setup(Arc::new(Corrupting(MemoryBackend::default())));
        for i in 0..5 {
            put(&store, "u", &format!("summary {i}"));
        }
        assert!(matches!(r.rehydrate_if_empty("u"), Err(RehydrateError::Store(_))));
        assert_eq!(index.collection_size("u"), 0);
    }
}
