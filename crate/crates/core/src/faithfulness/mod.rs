//! Faithfulness scoring of generated answers: grounding completeness,
//! hallucination rate and method citations, plus the query-suite harness.

pub mod rules;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rag::{AnswerGenerator, ChatResponse, RagEngine, RagError, Strategy};
use rules::{
    count_method_citations, extract_feature_mentions, extract_numeric_claims, hallucinated_features, quoted_tokens,
    score_grounding, RULES_VERSION,
};

pub const DEFAULT_SUITE_JSONL: &str = include_str!("../../data/eval_suite.jsonl");

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate {0}")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTruth {
    pub token: String,
    pub method: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthPack {
    pub importance_scores: Vec<ImportanceTruth>,
    pub explanation_types: BTreeSet<String>,
    pub dataset_facts: BTreeMap<String, f64>,
}

impl GroundTruthPack {
    pub fn validate(&self) -> Result<(), SuiteError> {
        let mut seen = BTreeSet::new();
        for s in &self.importance_scores {
            if !seen.insert((s.token.to_lowercase(), s.method.to_lowercase())) {
                return Err(SuiteError::Duplicate(format!("importance entry ({}, {})", s.token, s.method)));
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, SuiteError> {
        let pack: Self = serde_json::from_slice(bytes)
            .map_err(|e| SuiteError::Malformed { line: e.line(), reason: e.to_string() })?;
        pack.validate()?;
        Ok(pack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryCategory {
    SingleMethod,
    Comparative,
    Adversarial,
    DatasetLevel,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 4] = [
        QueryCategory::SingleMethod,
        QueryCategory::Comparative,
        QueryCategory::Adversarial,
        QueryCategory::DatasetLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryCategory::SingleMethod => "single_method",
            QueryCategory::Comparative => "comparative",
            QueryCategory::Adversarial => "adversarial",
            QueryCategory::DatasetLevel => "dataset_level",
        }
    }
}

impl fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown query category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub id: String,
    pub text: String,
    pub category: QueryCategory,
    /// The non-existent feature an adversarial query asks about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_feature: Option<String>,
}

/// One query per line; blank lines and `#` comments are skipped.
pub fn parse_suite(jsonl: &str) -> Result<Vec<EvalQuery>, SuiteError> {
    let mut out: Vec<EvalQuery> = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in jsonl.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let q: EvalQuery =
            serde_json::from_str(line).map_err(|e| SuiteError::Malformed { line: i + 1, reason: e.to_string() })?;
        if !ids.insert(q.id.clone()) {
            return Err(SuiteError::Duplicate(format!("query id {}", q.id)));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn default_suite() -> Vec<EvalQuery> {
    parse_suite(DEFAULT_SUITE_JSONL).expect("bundled suite parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub category: QueryCategory,
    pub numeric_claims: usize,
    pub grounded_claims: usize,
    pub feature_mentions: usize,
    pub hallucinated_features: usize,
    pub citation_count: usize,
    pub mentioned: Vec<String>,
    pub hallucinated: Vec<String>,
    pub cited_artifact_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub rules_version: String,
    pub averaging: String,
    pub strategy: Strategy,
    pub generator: String,
    pub n_queries: usize,
    pub grounding_completeness: f64,
    pub hallucination_rate: f64,
    pub citations_per_response: f64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub per_query: Vec<QueryRow>,
}

impl FaithfulnessReport {
    /// Micro-averaged aggregates over `rows`. With no numeric claims at all,
    /// grounding is 1.0; with no feature mentions, hallucination is 0.0.
    pub fn from_rows(strategy: Strategy, generator: &str, rows: Vec<QueryRow>) -> Self {
        let claims: usize = rows.iter().map(|r| r.numeric_claims).sum();
        let grounded: usize = rows.iter().map(|r| r.grounded_claims).sum();
        let mentions: usize = rows.iter().map(|r| r.feature_mentions).sum();
        let hallucinated: usize = rows.iter().map(|r| r.hallucinated_features).sum();
        let citations: usize = rows.iter().map(|r| r.citation_count).sum();
        let ratio = |num: usize, den: usize, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
        Self {
            rules_version: RULES_VERSION.to_string(),
            averaging: "micro".to_string(),
            strategy,
            generator: generator.to_string(),
            n_queries: rows.len(),
            grounding_completeness: ratio(grounded, claims, 1.0),
            hallucination_rate: ratio(hallucinated, mentions, 0.0),
            citations_per_response: ratio(citations, rows.len(), 0.0),
            complete: true,
            abort_reason: None,
            per_query: rows,
        }
    }

    /// Recompute aggregates from `per_query` and compare exactly.
    pub fn is_consistent(&self) -> bool {
        let again = Self::from_rows(self.strategy, &self.generator, self.per_query.clone());
        again.grounding_completeness == self.grounding_completeness
            && again.hallucination_rate == self.hallucination_rate
            && again.citations_per_response == self.citations_per_response
            && again.n_queries == self.n_queries
    }

    pub fn summary_text(&self) -> String {
        format!(
            "Faithfulness evaluation with {} prompting and the {} generator over {} queries: grounding completeness {:.3}, hallucination rate {:.3}, citations per response {:.3}.",
            self.strategy, self.generator, self.n_queries, self.grounding_completeness, self.hallucination_rate, self.citations_per_response
        )
    }
}

/// Score one response against its retrieved docs.
pub fn evaluate_response(
    query: &EvalQuery,
    response: &ChatResponse,
    truth: &GroundTruthPack,
    vocabulary: &BTreeSet<String>,
) -> QueryRow {
    let claims = extract_numeric_claims(&response.text);
    let (grounded, total) = score_grounding(&claims, &response.retrieved, truth);
    let mut vocab = vocabulary.clone();
    vocab.extend(quoted_tokens(&response.text));
    let mentioned = extract_feature_mentions(&response.text, &vocab);
    let hallucinated = hallucinated_features(&mentioned, &response.retrieved);
    QueryRow {
        query_id: query.id.clone(),
        category: query.category,
        numeric_claims: total,
        grounded_claims: grounded,
        feature_mentions: mentioned.len(),
        hallucinated_features: hallucinated.len(),
        citation_count: count_method_citations(&response.text),
        mentioned,
        hallucinated,
        cited_artifact_ids: response.cited_artifact_ids.clone(),
    }
}

/// Answer every query without history and aggregate. A generator failure
/// stops the run and returns the rows so far, marked incomplete.
#[allow(clippy::too_many_arguments)]
pub fn run_eval_suite(
    engine: &RagEngine,
    user_id: &str,
    queries: &[EvalQuery],
    strategy: Strategy,
    generator: &dyn AnswerGenerator,
    truth: &GroundTruthPack,
    vocabulary: &BTreeSet<String>,
    k: usize,
) -> Result<FaithfulnessReport, RagError> {
    let mut rows = Vec::with_capacity(queries.len());
    let mut abort = None;
    for q in queries {
        match engine.answer_stateless(user_id, &q.text, strategy, generator, k) {
            Ok(resp) => rows.push(evaluate_response(q, &resp, truth, vocabulary)),
            Err(RagError::Generator(e)) => {
                abort = Some(format!("query {}: {e}", q.id));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut report = FaithfulnessReport::from_rows(strategy, generator.identifier(), rows);
    if let Some(reason) = abort {
        report.complete = false;
        report.abort_reason = Some(reason);
    }
    Ok(report)
}
