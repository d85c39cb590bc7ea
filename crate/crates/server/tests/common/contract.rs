//! Storage contract shared by every backend: blob put/get/list, user
//! isolation and payload-before-metadata write ordering.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use xaistore::store::{
    ArtifactRecord, ArtifactStore, Bucket, Provenance, StorageBackend, StorageRef, StoreError, SummaryForRag,
};

/// Records every `put` and can fail the n-th one.
pub struct Recording {
    inner: Arc<dyn StorageBackend>,
    pub puts: Mutex<Vec<(Bucket, String)>>,
    fail_at: Mutex<Option<usize>>,
}

impl Recording {
    pub fn new(inner: Arc<dyn StorageBackend>) -> Self {
        Self { inner, puts: Mutex::new(Vec::new()), fail_at: Mutex::new(None) }
    }

    pub fn fail_put_number(&self, n: usize) {
        *self.fail_at.lock().unwrap() = Some(n);
    }
}

impl StorageBackend for Recording {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn put(&self, bucket: Bucket, key: &str, data: &[u8]) -> Result<(), StoreError> {
        let mut puts = self.puts.lock().unwrap();
        if *self.fail_at.lock().unwrap() == Some(puts.len()) {
            return Err(StoreError::BackendUnavailable("injected failure".into()));
        }
        self.inner.put(bucket, key, data)?;
        puts.push((bucket, key.to_string()));
        Ok(())
    }

    fn get(&self, bucket: Bucket, key: &str) -> Result<Vec<u8>, StoreError> {
        self.inner.get(bucket, key)
    }

    fn list(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError> {
        self.inner.list(bucket, prefix)
    }

    fn check(&self) -> Result<(), StoreError> {
        self.inner.check()
    }
}

pub fn record(user: &str, id: &str, payloads: &[StorageRef]) -> ArtifactRecord {
    ArtifactRecord {
        artifact_id: id.to_string(),
        user_id: user.to_string(),
        plot_type: "text_occlusion".into(),
        title: format!("record {id}"),
        summary_for_rag: SummaryForRag {
            text: format!("Summary of {id}: growth (+0.245)."),
            keywords: vec!["occlusion".into()],
            numeric_facts: BTreeMap::from([("baseline".to_string(), 0.912)]),
        },
        provenance: Provenance {
            model: "lexicon-financial-v1".into(),
            xai_method: "occlusion".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
            sample_id: Some("demo:1".into()),
        },
        payload_refs: payloads.to_vec(),
    }
}

/// Runs the whole contract against a fresh, empty backend.
pub fn run_contract(backend: Arc<dyn StorageBackend>) {
    blobs(backend.as_ref());
    isolation(backend.clone());
    ordering(backend);
}

fn blobs(b: &dyn StorageBackend) {
    b.check().expect("reachable");
    assert!(b.list(Bucket::Plots, "").unwrap().is_empty(), "fresh backend is empty");
    assert!(matches!(b.get(Bucket::Plots, "u/missing.png"), Err(StoreError::NotFound(_))));

    b.put(Bucket::Plots, "u/a/one.bin", &[0, 1, 2, 255]).unwrap();
    b.put(Bucket::Plots, "u/b/two.bin", b"two").unwrap();
    b.put(Bucket::Plots, "v/a/three.bin", b"three").unwrap();
    b.put(Bucket::Datasets, "u/a/raw.csv", b"text\nx\n").unwrap();
    assert_eq!(b.get(Bucket::Plots, "u/a/one.bin").unwrap(), vec![0, 1, 2, 255]);

    b.put(Bucket::Plots, "u/b/two.bin", b"TWO").unwrap();
    assert_eq!(b.get(Bucket::Plots, "u/b/two.bin").unwrap(), b"TWO");

    assert_eq!(b.list(Bucket::Plots, "u/").unwrap(), ["u/a/one.bin", "u/b/two.bin"]);
    assert_eq!(b.list(Bucket::Plots, "").unwrap(), ["u/a/one.bin", "u/b/two.bin", "v/a/three.bin"]);
    assert_eq!(b.list(Bucket::Plots, "u/a").unwrap(), ["u/a/one.bin"]);
    assert!(b.list(Bucket::Plots, "w/").unwrap().is_empty());
    assert_eq!(b.list(Bucket::Datasets, "").unwrap(), ["u/a/raw.csv"], "buckets are disjoint");
    assert!(matches!(b.get(Bucket::Datasets, "u/a/one.bin"), Err(StoreError::NotFound(_))));

    assert!(matches!(b.put(Bucket::Plots, "../escape", b"x"), Err(StoreError::SchemaViolation(_))));
    assert!(matches!(b.put(Bucket::Plots, "/abs", b"x"), Err(StoreError::SchemaViolation(_))));
}

fn isolation(backend: Arc<dyn StorageBackend>) {
    let store = ArtifactStore::new(backend);
    let payload = StorageRef::payload(Bucket::TextResults, "alice", "01A", "result.json");
    let rec_a = record("alice", "01A", std::slice::from_ref(&payload));
    store.put_artifact("alice", rec_a.clone(), &[(payload.clone(), b"{}".to_vec())]).unwrap();
    store.put_artifact("bob", record("bob", "01B", &[]), &[]).unwrap();

    assert_eq!(store.list_metadata("alice").unwrap(), vec![rec_a.clone()]);
    assert_eq!(store.list_metadata("bob").unwrap().len(), 1);
    assert!(store.list_metadata("carol").unwrap().is_empty());
    assert_eq!(store.get_artifact("alice", "01A").unwrap(), rec_a);
    assert!(matches!(store.get_artifact("bob", "01A"), Err(StoreError::NotFound(_))));
    assert_eq!(store.get_blob(&payload).unwrap(), b"{}");

    let stored = store.get_artifact_bytes("alice", "01A").unwrap();
    assert_eq!(stored, rec_a.to_canonical_json(), "metadata is stored canonically");

    assert!(matches!(
        store.put_artifact("alice", record("bob", "01C", &[]), &[]),
        Err(StoreError::SchemaViolation(_))
    ));
}

fn ordering(backend: Arc<dyn StorageBackend>) {
    let rec = Arc::new(Recording::new(backend));
    let store = ArtifactStore::new(rec.clone());
    let p1 = StorageRef::payload(Bucket::TextResults, "dora", "01D", "result.json");
    let p2 = StorageRef::payload(Bucket::Plots, "dora", "01D", "plot.png");
    store
        .put_artifact(
            "dora",
            record("dora", "01D", &[p1.clone(), p2.clone()]),
            &[(p1.clone(), b"{}".to_vec()), (p2.clone(), vec![137, 80])],
        )
        .unwrap();
    let puts = rec.puts.lock().unwrap().clone();
    assert_eq!(puts.len(), 3);
    assert_eq!(puts.last().unwrap(), &(Bucket::Metadata, "dora/01D.json".to_string()), "metadata written last");

    // a failed payload write leaves no visible record
    rec.fail_put_number(4);
    let p3 = StorageRef::payload(Bucket::TextResults, "dora", "01E", "result.json");
    let p4 = StorageRef::payload(Bucket::Plots, "dora", "01E", "plot.png");
    let err = store
        .put_artifact(
            "dora",
            record("dora", "01E", &[p3.clone(), p4.clone()]),
            &[(p3, b"{}".to_vec()), (p4, vec![1])],
        )
        .unwrap_err();
    assert!(matches!(err, StoreError::BackendUnavailable(_)));
    let ids: Vec<String> = store.list_metadata("dora").unwrap().into_iter().map(|r| r.artifact_id).collect();
    assert_eq!(ids, ["01D"]);

    // payloads that do not match the declared refs are rejected before any write
    let before = rec.puts.lock().unwrap().len();
    let stray = StorageRef::payload(Bucket::TextResults, "dora", "01F", "result.json");
    assert!(matches!(
        store.put_artifact("dora", record("dora", "01F", &[]), &[(stray, b"{}".to_vec())]),
        Err(StoreError::SchemaViolation(_))
    ));
    assert_eq!(rec.puts.lock().unwrap().len(), before);
}
