//! Question answering over stored explanation artifacts.

mod generate;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    scored_tokens, AnswerGenerator, ChatCompletionGenerator, ExtractiveGenerator, GeneratorError, ScriptedGenerator,
    INSUFFICIENT_EVIDENCE,
};

use crate::faithfulness::rules::cited_artifact_ids;
use crate::index::{IndexError, SearchHit, VectorIndex};
use crate::rehydrate::{RehydrateError, Rehydrator};

pub const DEFAULT_K: usize = 6;
pub const HISTORY_CAP: usize = 20;

pub const NAIVE_SYSTEM_PROMPT: &str = "Answer the user's question based on the following context.";

pub const CONSTRAINED_SYSTEM_PROMPT: &str = "You answer questions about stored model explanations using only the retrieved documents below. Requirements:
(i) cite specific XAI artifacts by method and explanation type;
(ii) distinguish between LIME and occlusion results when both are present;
(iii) include numeric values (confidence scores, importance weights) directly from the retrieved documents;
(iv) state when evidence is insufficient rather than speculating.";

#[derive(Debug, Error)]
pub enum RagError {
    #[error(transparent)]
    Rehydrate(#[from] RehydrateError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    #[default]
    Constrained,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Constrained => "constrained",
        }
    }

    pub fn system_prompt(self) -> &'static str {
        match self {
            Strategy::Naive => NAIVE_SYSTEM_PROMPT,
            Strategy::Constrained => CONSTRAINED_SYSTEM_PROMPT,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Strategy::Naive),
            "constrained" => Ok(Strategy::Constrained),
            other => Err(format!("unknown strategy {other:?} (expected naive or constrained)")),
        }
    }
}

/// A search hit carried verbatim from its metadata record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub artifact_id: String,
    pub title: String,
    pub plot_type: String,
    pub summary_text: String,
    pub keywords: Vec<String>,
    pub numeric_facts: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub score: f64,
}

impl From<SearchHit> for RetrievedDoc {
    fn from(hit: SearchHit) -> Self {
        let e = hit.entry;
        Self {
            artifact_id: e.artifact_id,
            title: e.title,
            plot_type: e.plot_type,
            summary_text: e.summary_text,
            keywords: e.keywords,
            numeric_facts: e.numeric_facts,
            sample_id: e.sample_id,
            score: hit.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy: Strategy,
    pub system_prompt: String,
    pub docs: Vec<RetrievedDoc>,
    pub question: String,
    pub history: Vec<Turn>,
}

/// One titled block per doc; identical for both strategies.
pub fn render_doc_block(n: usize, doc: &RetrievedDoc) -> String {
    let mut out = format!(
        "[Document {n}]\nTitle: {}\nType: {}\nSummary: {}\n",
        doc.title, doc.plot_type, doc.summary_text
    );
    if !doc.numeric_facts.is_empty() {
        let facts = doc
            .numeric_facts
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("Numeric facts: {facts}\n"));
    }
    out
}

impl PromptBundle {
    pub fn render_context(&self) -> String {
        if self.docs.is_empty() {
            return "(no documents retrieved)\n".to_string();
        }
        self.docs
            .iter()
            .enumerate()
            .map(|(i, d)| render_doc_block(i + 1, d))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render_user_message(&self) -> String {
        let mut out = format!("Context:\n\n{}\n", self.render_context());
        if !self.history.is_empty() {
            out.push_str("Conversation so far:\n");
            for t in &self.history {
                out.push_str(&format!("User: {}\nAssistant: {}\n", t.question, t.answer));
            }
            out.push('\n');
        }
        out.push_str(&format!("Question: {}", self.question));
        out
    }
}

pub fn build_prompt(docs: Vec<RetrievedDoc>, question: &str, strategy: Strategy, history: Vec<Turn>) -> PromptBundle {
    PromptBundle {
        strategy,
        system_prompt: strategy.system_prompt().to_string(),
        docs,
        question: question.to_string(),
        history,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub cited_artifact_ids: Vec<String>,
    pub strategy: Strategy,
    pub retrieved: Vec<RetrievedDoc>,
}

pub struct RagEngine {
    index: Arc<VectorIndex>,
    rehydrator: Arc<Rehydrator>,
    history: Mutex<HashMap<String, VecDeque<Turn>>>,
}

impl RagEngine {
    pub fn new(index: Arc<VectorIndex>, rehydrator: Arc<Rehydrator>) -> Self {
        Self { index, rehydrator, history: Mutex::new(HashMap::new()) }
    }

    /// Rehydrates the user's collection if needed, then searches.
    pub fn retrieve_context(&self, user_id: &str, question: &str, k: usize) -> Result<Vec<RetrievedDoc>, RagError> {
        if k == 0 {
            return Err(RagError::InvalidRequest("k must be at least 1".into()));
        }
        self.rehydrator.rehydrate_if_empty(user_id)?;
        Ok(self
            .index
            .search(user_id, question, k)?
            .into_iter()
            .map(RetrievedDoc::from)
            .collect())
    }

    pub fn history(&self, user_id: &str) -> Vec<Turn> {
        self.history
            .lock()
            .get(user_id)
            .map(|h| h.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn clear_history(&self, user_id: &str) {
        self.history.lock().remove(user_id);
    }

    fn respond(
        &self,
        user_id: &str,
        question: &str,
        strategy: Strategy,
        generator: &dyn AnswerGenerator,
        k: usize,
        history: Vec<Turn>,
    ) -> Result<ChatResponse, RagError> {
        let docs = self.retrieve_context(user_id, question, k)?;
        let bundle = build_prompt(docs, question, strategy, history);
        let text = generator.generate(&bundle)?;
        let cited_artifact_ids = cited_artifact_ids(&text, &bundle.docs);
        Ok(ChatResponse { text, cited_artifact_ids, strategy, retrieved: bundle.docs })
    }

    /// Answer with conversation history and record the turn.
    pub fn answer(
        &self,
        user_id: &str,
        question: &str,
        strategy: Strategy,
        generator: &dyn AnswerGenerator,
        k: usize,
    ) -> Result<ChatResponse, RagError> {
        let response = self.respond(user_id, question, strategy, generator, k, self.history(user_id))?;
        let mut all = self.history.lock();
        let h = all.entry(user_id.to_string()).or_default();
        h.push_back(Turn { question: question.to_string(), answer: response.text.clone() });
        while h.len() > HISTORY_CAP {
            h.pop_front();
        }
        Ok(response)
    }

    /// Answer without reading or writing history.
    pub fn answer_stateless(
        &self,
        user_id: &str,
        question: &str,
        strategy: Strategy,
        generator: &dyn AnswerGenerator,
        k: usize,
    ) -> Result<ChatResponse, RagError> {
        self.respond(user_id, question, strategy, generator, k, Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::HashingEmbedder;
    use crate::store::{ArtifactRecord, ArtifactStore, MemoryBackend, Provenance, SummaryForRag};

    fn engine() -> (ArtifactStore, Arc<VectorIndex>, RagEngine) {
        let store = ArtifactStore::new(Arc::new(MemoryBackend::default()));
        let index = Arc::new(VectorIndex::new(Arc::new(HashingEmbedder::default())));
        let rehydrator = Arc::new(Rehydrator::new(store.clone(), index.clone()));
        (store, index.clone(), RagEngine::new(index, rehydrator))
    }

    fn put(store: &ArtifactStore, plot_type: &str, method: &str, summary: &str) -> String {
        let rec = ArtifactRecord {
            plot_type: plot_type.into(),
            title: format!("{method} explanation"),
            summary_for_rag: SummaryForRag {
                text: summary.into(),
                keywords: vec![method.into(), "positive".into()],
                numeric_facts: BTreeMap::from([("baseline".to_string(), 0.912)]),
            },
            provenance: Provenance {
                model: "m".into(),
                xai_method: method.into(),
                timestamp: "2024-01-01T00:00:00.000Z".into(),
                sample_id: Some("d:1".into()),
            },
            ..Default::default()
        };
        store.put_artifact("u", rec, &[]).unwrap()
    }

    #[test]
    fn constrained_prompt_has_requirements() {
        let b = build_prompt(vec![], "q", Strategy::Constrained, vec![]);
        assert!(b.system_prompt.contains("distinguish between LIME and occlusion results when both are present"));
        assert!(b.system_prompt.contains("state when evidence is insufficient"));
        assert_eq!(build_prompt(vec![], "q", Strategy::Naive, vec![]).system_prompt, NAIVE_SYSTEM_PROMPT);
    }

    #[test]
    fn doc_blocks_identical_across_strategies() {
        let d = RetrievedDoc {
            artifact_id: "a".into(),
            title: "t".into(),
            plot_type: "text_lime".into(),
            summary_text: "s".into(),
            keywords: vec![],
            numeric_facts: BTreeMap::from([("baseline".to_string(), 0.5)]),
            sample_id: None,
            score: 0.3,
        };
        let a = build_prompt(vec![d.clone()], "q", Strategy::Naive, vec![]);
        let b = build_prompt(vec![d], "q", Strategy::Constrained, vec![]);
        assert_eq!(a.render_context(), b.render_context());
        assert_eq!(a.render_user_message(), b.render_user_message());
        assert!(a.render_context().contains("Numeric facts: baseline = 0.5"));
    }

    #[test]
    fn agreement_question_retrieves_both_methods() {
        let (store, _, rag) = engine();
        let o = put(&store, "text_occlusion", "occlusion", "Target: positive. Top words: strong (+0.312), growth (+0.287)");
        let l = put(&store, "text_lime", "lime", "Target: positive. Top words: growth (+0.289), forecasts (+0.201)");
        let docs = rag
            .retrieve_context("u", "Do the XAI methods agree on the most important words?", 2)
            .unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.artifact_id.clone()).collect();
        assert!(ids.contains(&o) && ids.contains(&l));

        let resp = rag
            .answer("u", "Do the XAI methods agree?", Strategy::Constrained, &ExtractiveGenerator, DEFAULT_K)
            .unwrap();
        assert!(resp.text.contains("Both the occlusion and LIME results identified \"growth\""));
        assert_eq!(resp.cited_artifact_ids.len(), 2);
        for id in &resp.cited_artifact_ids {
            assert!(resp.retrieved.iter().any(|d| &d.artifact_id == id));
        }
    }

    #[test]
    fn empty_store_answers_insufficient() {
        let (_, _, rag) = engine();
        let resp = rag.answer("u", "anything?", Strategy::Constrained, &ExtractiveGenerator, DEFAULT_K).unwrap();
        assert_eq!(resp.text, INSUFFICIENT_EVIDENCE);
        assert!(resp.cited_artifact_ids.is_empty());
        assert!(resp.retrieved.is_empty());
    }

    #[test]
    fn history_is_capped() {
        let (_, _, rag) = engine();
        for i in 0..25 {
            rag.answer("u", &format!("q{i}"), Strategy::Naive, &ExtractiveGenerator, 1).unwrap();
        }
        let h = rag.history("u");
        assert_eq!(h.len(), HISTORY_CAP);
        assert_eq!(h[0].question, "q5");
        rag.answer_stateless("u", "x", Strategy::Naive, &ExtractiveGenerator, 1).unwrap();
        assert_eq!(rag.history("u").len(), HISTORY_CAP);
        assert!(rag.history("other").is_empty());
    }

    #[test]
    fn deterministic_answers() {
        let (store, _, rag) = engine();
        put(&store, "text_occlusion", "occlusion", "Target: positive. Top words: strong (+0.312)");
        let a = rag.answer_stateless("u", "strong?", Strategy::Constrained, &ExtractiveGenerator, 6).unwrap();
        let b = rag.answer_stateless("u", "strong?", Strategy::Constrained, &ExtractiveGenerator, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_failure_propagates() {
        let (_, _, rag) = engine();
        let g = ScriptedGenerator::default();
        assert!(matches!(
            rag.answer("u", "q", Strategy::Naive, &g, 3),
            Err(RagError::Generator(GeneratorError::Unavailable(_)))
        ));
        assert!(rag.history("u").is_empty());
    }
}
