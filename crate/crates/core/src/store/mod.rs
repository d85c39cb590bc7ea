//! Persistent artifact store.
//!
//! Every explanation, dataset summary and evaluation report is written as an
//! [`ArtifactRecord`] (JSON, keys sorted) in the `metadata` bucket, next to
//! any payload blobs it references in the other buckets:
//!
//! ```text
//! metadata/{user_id}/{artifact_id}.json
//! {bucket}/{user_id}/{artifact_id}/{name}
//! ```
//!
//! Payloads are written before the metadata record, so a listed record never
//! points at a missing payload. There is no delete.

mod fs;
mod memory;
mod s3;
pub mod sigv4;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ulid::{Generator, Ulid};

pub use fs::FsBackend;
pub use memory::MemoryBackend;
pub use s3::{S3Backend, S3Config};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("storage backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("corrupt object {key}: {reason}")]
    Corrupt { key: String, reason: String },
}

impl StoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, StoreError::BackendUnavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    #[serde(rename = "plots")]
    Plots,
    #[serde(rename = "metadata")]
    Metadata,
    #[serde(rename = "datasets")]
    Datasets,
    #[serde(rename = "text-results")]
    TextResults,
    #[serde(rename = "vision-results")]
    VisionResults,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::Plots,
        Bucket::Metadata,
        Bucket::Datasets,
        Bucket::TextResults,
        Bucket::VisionResults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Plots => "plots",
            Bucket::Metadata => "metadata",
            Bucket::Datasets => "datasets",
            Bucket::TextResults => "text-results",
            Bucket::VisionResults => "vision-results",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bucket {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| StoreError::SchemaViolation(format!("unknown bucket {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StorageRef {
    pub bucket: Bucket,
    pub key: String,
}

impl StorageRef {
    pub fn new(bucket: Bucket, key: impl Into<String>) -> Self {
        Self { bucket, key: key.into() }
    }

    /// `{user_id}/{artifact_id}/{name}` in `bucket`.
    pub fn payload(bucket: Bucket, user_id: &str, artifact_id: &str, name: &str) -> Self {
        Self::new(bucket, format!("{user_id}/{artifact_id}/{name}"))
    }
}

impl fmt::Display for StorageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.bucket, self.key)
    }
}

/// Retrieval summary: the text is what gets embedded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryForRag {
    pub text: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub numeric_facts: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub xai_method: String,
    /// RFC 3339.
    #[serde(default)]
    pub timestamp: String,
    /// The sample an explanation was computed for, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactRecord {
    #[serde(default)]
    pub artifact_id: String,
    #[serde(default)]
    pub user_id: String,
    /// Method/type tag, e.g. `text_occlusion`.
    pub plot_type: String,
    pub title: String,
    pub summary_for_rag: SummaryForRag,
    pub provenance: Provenance,
    #[serde(default)]
    pub payload_refs: Vec<StorageRef>,
}

impl ArtifactRecord {
    /// Canonical encoding: UTF-8 JSON with object keys sorted.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.summary_for_rag.text.trim().is_empty() {
            return Err(StoreError::SchemaViolation("summary_for_rag.text is empty".into()));
        }
        if self.plot_type.trim().is_empty() {
            return Err(StoreError::SchemaViolation("plot_type is empty".into()));
        }
        for (name, v) in &self.summary_for_rag.numeric_facts {
            if !v.is_finite() {
                return Err(StoreError::SchemaViolation(format!("numeric fact {name:?} is not finite")));
            }
        }
        Ok(())
    }
}

/// Serialize through `serde_json::Value`, whose maps are ordered by key.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("artifact types always serialize");
    serde_json::to_vec(&v).expect("JSON values always serialize")
}

/// Object storage primitive shared by all backends.
///
/// Single-key reads observe the latest completed write, and `list` returns
/// every key written so far under the prefix, sorted.
pub trait StorageBackend: Send + Sync {
    fn name(&self) -> &str;
    fn put(&self, bucket: Bucket, key: &str, data: &[u8]) -> Result<(), StoreError>;
    fn get(&self, bucket: Bucket, key: &str) -> Result<Vec<u8>, StoreError>;
    fn list(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError>;
    /// Cheap reachability probe.
    fn check(&self) -> Result<(), StoreError>;
}

static ID_GEN: Mutex<Generator> = Mutex::new(Generator::new());

/// Timestamp-prefixed random id, monotonic within this process.
pub fn new_artifact_id() -> String {
    let mut gen = ID_GEN.lock();
    gen.generate().unwrap_or_else(|_| Ulid::new()).to_string()
}

pub(crate) fn validate_key(key: &str) -> Result<(), StoreError> {
    if key.is_empty() || key.starts_with('/') || key.ends_with('/') {
        return Err(StoreError::SchemaViolation(format!("invalid key {key:?}")));
    }
    for part in key.split('/') {
        if part.is_empty() || part == "." || part == ".." || part.starts_with('.') {
            return Err(StoreError::SchemaViolation(format!("invalid key {key:?}")));
        }
    }
    if key.chars().any(|c| c.is_control() || c == '\\') {
        return Err(StoreError::SchemaViolation(format!("invalid key {key:?}")));
    }
    Ok(())
}

fn validate_segment(what: &str, value: &str) -> Result<(), StoreError> {
    let ok = !value.is_empty()
        && value.len() <= 128
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '@'))
        && !value.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::SchemaViolation(format!("invalid {what} {value:?}")))
    }
}

/// Artifact-level operations over a [`StorageBackend`].
#[derive(Clone)]
pub struct ArtifactStore {
    backend: Arc<dyn StorageBackend>,
}

impl ArtifactStore {
    pub fn new(backend: Arc<dyn StorageBackend>) -> Self {
        Self { backend }
    }

    pub fn backend(&self) -> &dyn StorageBackend {
        self.backend.as_ref()
    }

    fn metadata_key(user_id: &str, artifact_id: &str) -> String {
        format!("{user_id}/{artifact_id}.json")
    }

    /// Write payloads, then the metadata record. Assigns an id when the
    /// record has none and stamps `user_id`.
    pub fn put_artifact(
        &self,
        user_id: &str,
        mut record: ArtifactRecord,
        payloads: &[(StorageRef, Vec<u8>)],
    ) -> Result<String, StoreError> {
        validate_segment("user id", user_id)?;
        if record.user_id.is_empty() {
            record.user_id = user_id.to_string();
        } else if record.user_id != user_id {
            return Err(StoreError::SchemaViolation(format!(
                "record belongs to {:?}, not {user_id:?}",
                record.user_id
            )));
        }
        if record.artifact_id.is_empty() {
            record.artifact_id = new_artifact_id();
        }
        validate_segment("artifact id", &record.artifact_id)?;
        record.validate()?;

        let declared: BTreeSet<&StorageRef> = record.payload_refs.iter().collect();
        let supplied: BTreeSet<&StorageRef> = payloads.iter().map(|(r, _)| r).collect();
        if declared.len() != record.payload_refs.len() || supplied.len() != payloads.len() {
            return Err(StoreError::SchemaViolation("duplicate payload reference".into()));
        }
        if declared != supplied {
            return Err(StoreError::SchemaViolation(
                "payload_refs do not match the supplied payloads".into(),
            ));
        }
        if payloads.iter().any(|(r, _)| r.bucket == Bucket::Metadata && !r.key.contains('/')) {
            return Err(StoreError::SchemaViolation("payload key collides with metadata layout".into()));
        }

        for (r, data) in payloads {
            self.put_blob(r, data)?;
        }
        let key = Self::metadata_key(user_id, &record.artifact_id);
        self.backend.put(Bucket::Metadata, &key, &record.to_canonical_json())?;
        Ok(record.artifact_id)
    }

    pub fn get_artifact(&self, user_id: &str, artifact_id: &str) -> Result<ArtifactRecord, StoreError> {
        validate_segment("user id", user_id)?;
        if validate_segment("artifact id", artifact_id).is_err() {
            return Err(StoreError::NotFound(artifact_id.to_string()));
        }
        let key = Self::metadata_key(user_id, artifact_id);
        let bytes = self.backend.get(Bucket::Metadata, &key)?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt { key, reason: e.to_string() })
    }

    /// Raw stored bytes of a metadata record.
    pub fn get_artifact_bytes(&self, user_id: &str, artifact_id: &str) -> Result<Vec<u8>, StoreError> {
        validate_segment("user id", user_id)?;
        self.backend.get(Bucket::Metadata, &Self::metadata_key(user_id, artifact_id))
    }

    /// All records of `user_id`, sorted by artifact id.
    pub fn list_metadata(&self, user_id: &str) -> Result<Vec<ArtifactRecord>, StoreError> {
        validate_segment("user id", user_id)?;
        let prefix = format!("{user_id}/");
        let mut ids: Vec<String> = self
            .backend
            .list(Bucket::Metadata, &prefix)?
            .into_iter()
            .filter_map(|k| {
                let rest = k.strip_prefix(&prefix)?;
                let id = rest.strip_suffix(".json")?;
                (!id.contains('/')).then(|| id.to_string())
            })
            .collect();
        ids.sort();
        ids.into_iter()
            .map(|id| {
                self.get_artifact(user_id, &id).map_err(|e| match e {
                    // listed but gone is a backend inconsistency, not a caller error
                    StoreError::NotFound(k) => StoreError::BackendUnavailable(format!("listed key vanished: {k}")),
                    other => other,
                })
            })
            .collect()
    }

    pub fn put_blob(&self, r: &StorageRef, data: &[u8]) -> Result<(), StoreError> {
        validate_key(&r.key)?;
        self.backend.put(r.bucket, &r.key, data)
    }

    pub fn get_blob(&self, r: &StorageRef) -> Result<Vec<u8>, StoreError> {
        validate_key(&r.key)?;
        self.backend.get(r.bucket, &r.key)
    }

    pub fn list_blobs(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError> {
        self.backend.list(bucket, prefix)
    }

    pub fn check(&self) -> Result<(), StoreError> {
        self.backend.check()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_record() -> ArtifactRecord {
        ArtifactRecord {
            plot_type: "text_occlusion".into(),
            title: "Occlusion \u{2014} sample #5".into(),
            summary_for_rag: SummaryForRag {
                text: "Target: positive. Top words: outperformer (+0.245), growth (+0.156)".into(),
                keywords: vec!["occlusion".into(), "positive".into()],
                numeric_facts: [("baseline".to_string(), 0.912)].into_iter().collect(),
            },
            provenance: Provenance {
                model: "finbert".into(),
                xai_method: "occlusion".into(),
                timestamp: "2025-01-01T00:00:00Z".into(),
                sample_id: None,
            },
            ..Default::default()
        }
    }

    fn store() -> ArtifactStore {
        ArtifactStore::new(Arc::new(MemoryBackend::default()))
    }

    #[test]
    fn record_round_trips_byte_identically() {
        let s = store();
        let id = s.put_artifact("alice", paper_record(), &[]).unwrap();
        let stored = s.get_artifact_bytes("alice", &id).unwrap();
        let back = s.get_artifact("alice", &id).unwrap();
        assert_eq!(back.to_canonical_json(), stored);
        assert_eq!(back.summary_for_rag.numeric_facts["baseline"], 0.912);
        assert_eq!(back.user_id, "alice");
    }

    #[test]
    fn canonical_json_has_sorted_keys() {
        let json = String::from_utf8(paper_record().to_canonical_json()).unwrap();
        let a = json.find("\"artifact_id\"").unwrap();
        let p = json.find("\"payload_refs\"").unwrap();
        let s = json.find("\"summary_for_rag\"").unwrap();
        let t = json.find("\"title\"").unwrap();
        assert!(a < p && p < s && s < t);
    }

    #[test]
    fn schema_violations() {
        let s = store();
        let mut r = paper_record();
        r.summary_for_rag.text = "  ".into();
        assert!(matches!(s.put_artifact("alice", r, &[]), Err(StoreError::SchemaViolation(_))));
        let mut r = paper_record();
        r.plot_type.clear();
        assert!(matches!(s.put_artifact("alice", r, &[]), Err(StoreError::SchemaViolation(_))));
        let mut r = paper_record();
        r.summary_for_rag.numeric_facts.insert("x".into(), f64::NAN);
        assert!(matches!(s.put_artifact("alice", r, &[]), Err(StoreError::SchemaViolation(_))));
        assert!(matches!(s.put_artifact("../x", paper_record(), &[]), Err(StoreError::SchemaViolation(_))));
        let mut r = paper_record();
        r.user_id = "bob".into();
        assert!(matches!(s.put_artifact("alice", r, &[]), Err(StoreError::SchemaViolation(_))));
    }

    #[test]
    fn payload_refs_must_match() {
        let s = store();
        let mut r = paper_record();
        r.artifact_id = new_artifact_id();
        let declared = StorageRef::payload(Bucket::TextResults, "alice", &r.artifact_id, "result.json");
        r.payload_refs = vec![declared.clone()];
        let other = StorageRef::payload(Bucket::Plots, "alice", &r.artifact_id, "plot.png");
        assert!(s.put_artifact("alice", r.clone(), &[(other, vec![1])]).is_err());
        assert!(s.put_artifact("alice", r.clone(), &[]).is_err());
        let id = s.put_artifact("alice", r, &[(declared.clone(), b"{}".to_vec())]).unwrap();
        assert_eq!(s.get_blob(&declared).unwrap(), b"{}");
        assert_eq!(s.get_artifact("alice", &id).unwrap().payload_refs, vec![declared]);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let s = store();
        assert!(matches!(s.get_artifact("alice", "01ARZ3NDEKTSV4RRFFQ69G5FAV"), Err(StoreError::NotFound(_))));
        assert!(matches!(s.get_artifact("alice", "../../etc"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn list_ignores_nested_payloads_in_metadata_bucket() {
        let s = store();
        let mut r = paper_record();
        r.artifact_id = new_artifact_id();
        let nested = StorageRef::payload(Bucket::Metadata, "alice", &r.artifact_id, "report.json");
        r.payload_refs = vec![nested.clone()];
        s.put_artifact("alice", r, &[(nested, b"{}".to_vec())]).unwrap();
        assert_eq!(s.list_metadata("alice").unwrap().len(), 1);
    }

    #[test]
    fn ids_are_monotonic() {
        let ids: Vec<String> = (0..200).map(|_| new_artifact_id()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(ids[0].len(), 26);
    }

    #[test]
    fn bucket_names() {
        for b in Bucket::ALL {
            assert_eq!(b.as_str().parse::<Bucket>().unwrap(), b);
            assert_eq!(serde_json::to_value(b).unwrap(), b.as_str());
        }
    }

    #[test]
    fn key_validation() {
        for bad in ["", "/a", "a/", "a//b", "a/../b", ".hidden", "a/.tmp"] {
            assert!(validate_key(bad).is_err(), "{bad}");
        }
        validate_key("alice/01ABC/result.json").unwrap();
    }
}
