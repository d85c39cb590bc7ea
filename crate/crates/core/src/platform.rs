//! Wiring of store, index, explainers, analytics and question answering
//! behind one per-user facade shared by the HTTP service and the CLI.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::Utc;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, DatasetHandle, DatasetRow, DatasetStats};
use crate::explain::{
    compare_methods, lime_explain, occlusion_explain, saliency_map, AgreementReport, ExplainError, ExplanationResult,
    LimeParams, Method, SaliencyMap, TextSample,
};
use crate::faithfulness::{self, EvalQuery, FaithfulnessReport, GroundTruthPack, ImportanceTruth, SuiteError};
use crate::index::{Embedder, IndexError, VectorIndex};
use crate::model::{PatchDetector, TextClassifier};
use crate::rag::{self, AnswerGenerator, ChatResponse, RagEngine, RagError, Strategy};
use crate::rehydrate::{RehydrateError, Rehydrator};
use crate::store::{
    canonical_json, new_artifact_id, ArtifactRecord, ArtifactStore, Bucket, Provenance, StorageBackend, StorageRef,
    StoreError, SummaryForRag,
};

/// Occlusion summaries list this many top words.
pub const OCCLUSION_SUMMARY_WORDS: usize = 4;
pub const DEFAULT_COMPARE_K: usize = 4;

pub const PLOT_DATASET_SUMMARY: &str = "dataset_summary";
pub const PLOT_VISION_SALIENCY: &str = "vision_saliency";
pub const PLOT_FAITHFULNESS_REPORT: &str = "faithfulness_report";

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Rehydrate(#[from] RehydrateError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Coarse error classes used for HTTP status codes and CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Invalid,
    Unavailable,
    Generator,
    Upstream,
    Internal,
}

fn store_kind(e: &StoreError) -> ErrorKind {
    match e {
        StoreError::NotFound(_) => ErrorKind::NotFound,
        StoreError::SchemaViolation(_) => ErrorKind::Invalid,
        StoreError::BackendUnavailable(_) => ErrorKind::Unavailable,
        StoreError::Corrupt { .. } => ErrorKind::Internal,
    }
}

impl PlatformError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PlatformError::Store(e) => store_kind(e),
            PlatformError::Rehydrate(RehydrateError::Store(e)) | PlatformError::Rag(RagError::Rehydrate(RehydrateError::Store(e))) => {
                store_kind(e)
            }
            PlatformError::Dataset(DatasetError::Model(_)) | PlatformError::Explain(ExplainError::Model(_)) => {
                ErrorKind::Upstream
            }
            PlatformError::Dataset(_) | PlatformError::Suite(_) | PlatformError::InvalidRequest(_) => ErrorKind::Invalid,
            PlatformError::Explain(ExplainError::Numerical(_)) => ErrorKind::Internal,
            PlatformError::Explain(_) => ErrorKind::Invalid,
            PlatformError::Rag(RagError::Generator(_)) => ErrorKind::Generator,
            PlatformError::Rag(RagError::InvalidRequest(_)) => ErrorKind::Invalid,
            PlatformError::Rag(_) | PlatformError::Index(_) | PlatformError::Rehydrate(_) => ErrorKind::Upstream,
            PlatformError::NotFound(_) => ErrorKind::NotFound,
            PlatformError::Config(_) => ErrorKind::Internal,
        }
    }
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub dataset_id: String,
    pub n_rows: usize,
    pub summary_artifact_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesPage {
    pub dataset_id: String,
    pub total: usize,
    pub offset: usize,
    pub rows: Vec<DatasetRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutcome {
    pub artifact_id: String,
    pub result: ExplanationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyOutcome {
    pub artifact_id: String,
    pub map: SaliencyMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub storage_backend: String,
    pub storage_reachable: bool,
    pub index_sizes: BTreeMap<String, usize>,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn trim_sentence(text: &str) -> &str {
    text.trim().trim_end_matches(['.', '!', '?'])
}

/// `Sample 1 of dataset D: <text>. Target: positive. Top words: a (+0.245), b (-0.031).`
pub fn explanation_summary(result: &ExplanationResult, row_id: &str, dataset_id: &str, text: &str, n: usize) -> String {
    let words = result
        .top(n)
        .iter()
        .map(|a| format!("{} ({:+.3})", a.token, a.importance))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Sample {row_id} of dataset {dataset_id}: {}. Target: {}. Top words: {words}.",
        trim_sentence(text),
        result.target_class
    )
}

pub struct Platform {
    store: ArtifactStore,
    index: Arc<VectorIndex>,
    rehydrator: Arc<Rehydrator>,
    rag: RagEngine,
    classifier: Arc<dyn TextClassifier>,
    generator: Arc<dyn AnswerGenerator>,
}

impl Platform {
    pub fn new(
        backend: Arc<dyn StorageBackend>,
        embedder: Arc<dyn Embedder>,
        classifier: Arc<dyn TextClassifier>,
        generator: Arc<dyn AnswerGenerator>,
    ) -> Self {
        let store = ArtifactStore::new(backend);
        let index = Arc::new(VectorIndex::new(embedder));
        let rehydrator = Arc::new(Rehydrator::new(store.clone(), index.clone()));
        let rag = RagEngine::new(index.clone(), rehydrator.clone());
        Self { store, index, rehydrator, rag, classifier, generator }
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn rehydrator(&self) -> &Rehydrator {
        &self.rehydrator
    }

    pub fn rag(&self) -> &RagEngine {
        &self.rag
    }

    pub fn classifier(&self) -> &dyn TextClassifier {
        self.classifier.as_ref()
    }

    pub fn generator(&self) -> &dyn AnswerGenerator {
        self.generator.as_ref()
    }

    /// Persist a record and make it searchable. An empty collection is
    /// rehydrated first so earlier artifacts are not shadowed.
    fn persist_and_index(
        &self,
        user_id: &str,
        record: ArtifactRecord,
        payloads: &[(StorageRef, Vec<u8>)],
    ) -> Result<String> {
        let id = self.store.put_artifact(user_id, record, payloads)?;
        self.rehydrator.rehydrate_if_empty(user_id)?;
        let stored = self.store.get_artifact(user_id, &id)?;
        self.index.index_record(user_id, &stored)?;
        Ok(id)
    }

    fn dataset_ref(user_id: &str, dataset_id: &str) -> StorageRef {
        StorageRef::payload(Bucket::Datasets, user_id, dataset_id, "raw.csv")
    }

    pub fn ingest_csv(&self, user_id: &str, raw: &[u8]) -> Result<IngestOutcome> {
        let rows = dataset::parse_rows(raw)?;
        let dataset_id = new_artifact_id();
        let source_ref = Self::dataset_ref(user_id, &dataset_id);
        self.store.put_blob(&source_ref, raw)?;
        let handle = DatasetHandle { dataset_id: dataset_id.clone(), rows, source_ref };
        let stats = dataset::compute_stats(&handle, self.classifier.as_ref())?;
        let summary_artifact_id = self.persist_dataset_summary(user_id, &handle, &stats)?;
        Ok(IngestOutcome { dataset_id, n_rows: handle.rows.len(), summary_artifact_id })
    }

    pub fn load_dataset(&self, user_id: &str, dataset_id: &str) -> Result<DatasetHandle> {
        if dataset_id.is_empty() || !dataset_id.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(PlatformError::NotFound(format!("dataset {dataset_id}")));
        }
        let source_ref = Self::dataset_ref(user_id, dataset_id);
        let raw = match self.store.get_blob(&source_ref) {
            Err(StoreError::NotFound(_)) => return Err(PlatformError::NotFound(format!("dataset {dataset_id}"))),
            other => other?,
        };
        let rows = dataset::parse_rows(&raw)?;
        Ok(DatasetHandle { dataset_id: dataset_id.to_string(), rows, source_ref })
    }

    pub fn dataset_stats(&self, user_id: &str, dataset_id: &str) -> Result<DatasetStats> {
        let handle = self.load_dataset(user_id, dataset_id)?;
        Ok(dataset::compute_stats(&handle, self.classifier.as_ref())?)
    }

    pub fn samples(&self, user_id: &str, dataset_id: &str, offset: usize, limit: usize) -> Result<SamplesPage> {
        let handle = self.load_dataset(user_id, dataset_id)?;
        let total = handle.rows.len();
        let rows = handle.rows.into_iter().skip(offset).take(limit).collect();
        Ok(SamplesPage { dataset_id: dataset_id.to_string(), total, offset, rows })
    }

    pub fn persist_dataset_summary(&self, user_id: &str, handle: &DatasetHandle, stats: &DatasetStats) -> Result<String> {
        let id = new_artifact_id();
        let stats_ref = StorageRef::payload(Bucket::Datasets, user_id, &id, "stats.json");
        let mut keywords = vec!["dataset".to_string(), "distribution".to_string(), "sentiment".to_string()];
        keywords.extend(stats.class_distribution.keys().cloned());
        let record = ArtifactRecord {
            artifact_id: id,
            user_id: user_id.to_string(),
            plot_type: PLOT_DATASET_SUMMARY.to_string(),
            title: format!("Dataset summary for {}", handle.dataset_id),
            summary_for_rag: SummaryForRag {
                text: dataset::summary_text(handle, stats),
                keywords,
                numeric_facts: dataset::numeric_facts(stats),
            },
            provenance: Provenance {
                model: self.classifier.identifier().to_string(),
                xai_method: "dataset_statistics".to_string(),
                timestamp: crate::explain::timestamp(Utc::now()),
                sample_id: None,
            },
            payload_refs: vec![stats_ref.clone()],
        };
        self.persist_and_index(user_id, record, &[(stats_ref, canonical_json(stats))])
    }

    fn sample_for(&self, user_id: &str, dataset_id: &str, row_id: &str) -> Result<(DatasetHandle, TextSample)> {
        let handle = self.load_dataset(user_id, dataset_id)?;
        let row = handle
            .row(row_id)
            .ok_or_else(|| PlatformError::NotFound(format!("row {row_id} of dataset {dataset_id}")))?;
        let sample = TextSample::new(handle.sample_id(row_id), row.text.clone());
        Ok((handle, sample))
    }

    fn persist_explanation(
        &self,
        user_id: &str,
        dataset_id: &str,
        row_id: &str,
        text: &str,
        result: &ExplanationResult,
    ) -> Result<String> {
        let id = new_artifact_id();
        let payload_ref = StorageRef::payload(Bucket::TextResults, user_id, &id, "result.json");
        let n = match result.method {
            Method::Occlusion => OCCLUSION_SUMMARY_WORDS,
            Method::Lime => result.attributions.len(),
        };
        let record = ArtifactRecord {
            artifact_id: id,
            user_id: user_id.to_string(),
            plot_type: result.method.plot_type().to_string(),
            title: format!("{} explanation for sample {row_id}", result.method.display_name()),
            summary_for_rag: SummaryForRag {
                text: explanation_summary(result, row_id, dataset_id, text, n),
                keywords: vec![result.method.as_str().to_string(), result.target_class.clone()],
                numeric_facts: BTreeMap::from([("baseline".to_string(), round3(result.baseline_confidence))]),
            },
            provenance: Provenance {
                model: result.model_id.clone(),
                xai_method: result.method.as_str().to_string(),
                timestamp: result.created_at.clone(),
                sample_id: Some(result.sample_id.clone()),
            },
            payload_refs: vec![payload_ref.clone()],
        };
        self.persist_and_index(user_id, record, &[(payload_ref, canonical_json(result))])
    }

    pub fn explain_occlusion(
        &self,
        user_id: &str,
        dataset_id: &str,
        row_id: &str,
        target: Option<&str>,
    ) -> Result<ExplainOutcome> {
        let (_, sample) = self.sample_for(user_id, dataset_id, row_id)?;
        let result = occlusion_explain(self.classifier.as_ref(), &sample, target, Utc::now())?;
        let artifact_id = self.persist_explanation(user_id, dataset_id, row_id, &sample.text, &result)?;
        Ok(ExplainOutcome { artifact_id, result })
    }

    pub fn explain_lime(&self, user_id: &str, dataset_id: &str, row_id: &str, params: &LimeParams) -> Result<ExplainOutcome> {
        let (_, sample) = self.sample_for(user_id, dataset_id, row_id)?;
        let result = lime_explain(self.classifier.as_ref(), &sample, params, Utc::now())?;
        let artifact_id = self.persist_explanation(user_id, dataset_id, row_id, &sample.text, &result)?;
        Ok(ExplainOutcome { artifact_id, result })
    }

    /// The stored result payload behind an explanation artifact.
    pub fn explanation(&self, user_id: &str, artifact_id: &str) -> Result<ExplanationResult> {
        let record = self.store.get_artifact(user_id, artifact_id)?;
        let payload = record
            .payload_refs
            .iter()
            .find(|r| r.bucket == Bucket::TextResults)
            .ok_or_else(|| PlatformError::NotFound(format!("explanation payload of {artifact_id}")))?;
        let bytes = self.store.get_blob(payload)?;
        serde_json::from_slice(&bytes).map_err(|e| {
            PlatformError::Store(StoreError::Corrupt { key: payload.key.clone(), reason: e.to_string() })
        })
    }

    /// Most recent stored explanation of each method for a sample.
    fn latest_explanations(&self, user_id: &str, sample_id: &str) -> Result<BTreeMap<Method, String>> {
        let mut latest = BTreeMap::new();
        for r in self.store.list_metadata(user_id)? {
            if r.provenance.sample_id.as_deref() != Some(sample_id) {
                continue;
            }
            for m in [Method::Occlusion, Method::Lime] {
                if r.plot_type == m.plot_type() {
                    latest.insert(m, r.artifact_id.clone());
                }
            }
        }
        Ok(latest)
    }

    pub fn compare(&self, user_id: &str, sample_id: &str, k: usize) -> Result<AgreementReport> {
        let latest = self.latest_explanations(user_id, sample_id)?;
        let get = |m: Method| {
            latest
                .get(&m)
                .ok_or_else(|| PlatformError::NotFound(format!("{} explanation for sample {sample_id}", m.as_str())))
        };
        let occ = self.explanation(user_id, get(Method::Occlusion)?)?;
        let lime = self.explanation(user_id, get(Method::Lime)?)?;
        Ok(compare_methods(&occ, &lime, k)?)
    }

    pub fn explain_saliency(
        &self,
        user_id: &str,
        detector: &dyn PatchDetector,
        image: &Array2<f64>,
        patch_size: usize,
        stride: usize,
        fill: f64,
    ) -> Result<SaliencyOutcome> {
        let map = saliency_map(detector, image, patch_size, stride, fill)?;
        let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
        for ((r, c), v) in map.heat.indexed_iter() {
            if *v > best {
                best = *v;
                at = (r, c);
            }
        }
        let id = new_artifact_id();
        let payload_ref = StorageRef::payload(Bucket::VisionResults, user_id, &id, "saliency.json");
        let record = ArtifactRecord {
            artifact_id: id,
            user_id: user_id.to_string(),
            plot_type: PLOT_VISION_SALIENCY.to_string(),
            title: format!("Saliency map from {}", detector.identifier()),
            summary_for_rag: SummaryForRag {
                text: format!(
                    "Saliency map of a {}x{} image with patch size {patch_size} and stride {stride}: the largest confidence drop {:.3} is at row {} column {}.",
                    image.nrows(),
                    image.ncols(),
                    best,
                    at.0,
                    at.1
                ),
                keywords: vec!["saliency".to_string(), "vision".to_string()],
                numeric_facts: BTreeMap::from([
                    ("baseline".to_string(), round3(map.baseline_confidence)),
                    ("max_drop".to_string(), round3(best)),
                ]),
            },
            provenance: Provenance {
                model: detector.identifier().to_string(),
                xai_method: "saliency".to_string(),
                timestamp: crate::explain::timestamp(Utc::now()),
                sample_id: None,
            },
            payload_refs: vec![payload_ref.clone()],
        };
        let artifact_id = self.persist_and_index(user_id, record, &[(payload_ref, canonical_json(&map))])?;
        Ok(SaliencyOutcome { artifact_id, map })
    }

    pub fn chat(&self, user_id: &str, question: &str, strategy: Strategy, k: Option<usize>) -> Result<ChatResponse> {
        Ok(self
            .rag
            .answer(user_id, question, strategy, self.generator.as_ref(), k.unwrap_or(rag::DEFAULT_K))?)
    }

    pub fn rehydrate(&self, user_id: &str) -> Result<usize> {
        Ok(self.rehydrator.rehydrate_if_empty(user_id)?)
    }

    pub fn list_artifacts(&self, user_id: &str) -> Result<Vec<ArtifactRecord>> {
        Ok(self.store.list_metadata(user_id)?)
    }

    pub fn get_artifact(&self, user_id: &str, artifact_id: &str) -> Result<ArtifactRecord> {
        Ok(self.store.get_artifact(user_id, artifact_id)?)
    }

    /// Normalized attribution tokens across all stored explanation results.
    pub fn attribution_vocabulary(&self, user_id: &str) -> Result<BTreeSet<String>> {
        let mut vocab = BTreeSet::new();
        for r in self.store.list_metadata(user_id)? {
            if r.plot_type == Method::Occlusion.plot_type() || r.plot_type == Method::Lime.plot_type() {
                let result = self.explanation(user_id, &r.artifact_id)?;
                vocab.extend(result.attributions.iter().flat_map(|a| crate::text::normalized_tokens(&a.token)));
            }
        }
        Ok(vocab)
    }

    /// Reference values from stored artifacts: top occlusion words, all LIME
    /// words, dataset facts and the set of artifact types.
    pub fn ground_truth_from_store(&self, user_id: &str) -> Result<GroundTruthPack> {
        let mut pack = GroundTruthPack::default();
        let mut seen = BTreeSet::new();
        for r in self.store.list_metadata(user_id)? {
            pack.explanation_types.insert(r.plot_type.clone());
            if r.plot_type == PLOT_DATASET_SUMMARY {
                pack.dataset_facts.extend(r.summary_for_rag.numeric_facts.clone());
                continue;
            }
            let method = match r.plot_type.as_str() {
                t if t == Method::Occlusion.plot_type() => Method::Occlusion,
                t if t == Method::Lime.plot_type() => Method::Lime,
                _ => continue,
            };
            let result = self.explanation(user_id, &r.artifact_id)?;
            let n = match method {
                Method::Occlusion => OCCLUSION_SUMMARY_WORDS,
                Method::Lime => result.attributions.len(),
            };
            for a in result.top(n) {
                let key = (a.token.to_lowercase(), method.as_str().to_string());
                if seen.insert(key) {
                    pack.importance_scores.push(ImportanceTruth {
                        token: a.token.to_lowercase(),
                        method: method.as_str().to_string(),
                        value: a.importance,
                    });
                }
            }
        }
        Ok(pack)
    }

    pub fn run_eval(
        &self,
        user_id: &str,
        suite: &[EvalQuery],
        strategy: Strategy,
        truth: Option<&GroundTruthPack>,
    ) -> Result<FaithfulnessReport> {
        self.run_eval_with(user_id, suite, strategy, self.generator.as_ref(), truth)
    }

    pub fn run_eval_with(
        &self,
        user_id: &str,
        suite: &[EvalQuery],
        strategy: Strategy,
        generator: &dyn AnswerGenerator,
        truth: Option<&GroundTruthPack>,
    ) -> Result<FaithfulnessReport> {
        self.rehydrator.rehydrate_if_empty(user_id)?;
        let owned;
        let truth = match truth {
            Some(t) => t,
            None => {
                owned = self.ground_truth_from_store(user_id)?;
                &owned
            }
        };
        truth.validate()?;
        let vocab = self.attribution_vocabulary(user_id)?;
        Ok(faithfulness::run_eval_suite(
            &self.rag,
            user_id,
            suite,
            strategy,
            generator,
            truth,
            &vocab,
            rag::DEFAULT_K,
        )?)
    }

    /// Store a report as a `faithfulness_report` artifact.
    pub fn persist_report(&self, user_id: &str, report: &FaithfulnessReport) -> Result<String> {
        let id = new_artifact_id();
        let payload_ref = StorageRef::payload(Bucket::Metadata, user_id, &id, "report.json");
        let record = ArtifactRecord {
            artifact_id: id,
            user_id: user_id.to_string(),
            plot_type: PLOT_FAITHFULNESS_REPORT.to_string(),
            title: format!("Faithfulness report ({})", report.strategy),
            summary_for_rag: SummaryForRag {
                text: report.summary_text(),
                keywords: vec!["faithfulness".to_string(), report.strategy.to_string()],
                numeric_facts: BTreeMap::from([
                    ("grounding_completeness".to_string(), report.grounding_completeness),
                    ("hallucination_rate".to_string(), report.hallucination_rate),
                    ("citations_per_response".to_string(), report.citations_per_response),
                    ("n_queries".to_string(), report.n_queries as f64),
                ]),
            },
            provenance: Provenance {
                model: report.generator.clone(),
                xai_method: "faithfulness_eval".to_string(),
                timestamp: crate::explain::timestamp(Utc::now()),
                sample_id: None,
            },
            payload_refs: vec![payload_ref.clone()],
        };
        self.persist_and_index(user_id, record, &[(payload_ref, canonical_json(report))])
    }

    pub fn health(&self) -> Health {
        let reachable = self.store.check().is_ok();
        Health {
            status: if reachable { "ok" } else { "degraded" }.to_string(),
            storage_backend: self.store.backend().name().to_string(),
            storage_reachable: reachable,
            index_sizes: self.index.sizes(),
        }
    }
}
