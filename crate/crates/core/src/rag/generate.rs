//! Answer generators: deterministic extractive, scripted replay, and a
//! remote chat-completion client.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PromptBundle, RetrievedDoc, Strategy};
use crate::faithfulness::rules::method_term;

pub const INSUFFICIENT_EVIDENCE: &str =
    "The retrieved explanations do not contain enough evidence to answer this question.";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("answer generator unavailable: {0}")]
    Unavailable(String),
    #[error("malformed generator response: {0}")]
    BadResponse(String),
}

pub trait AnswerGenerator: Send + Sync {
    fn identifier(&self) -> &str;
    fn generate(&self, bundle: &PromptBundle) -> Result<String, GeneratorError>;
}

static SCORED_TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\S+) \(([+-]\d+\.\d+)\)").unwrap());

/// Tokens listed as `word (+0.123)` in a summary, in order.
pub fn scored_tokens(summary: &str) -> Vec<String> {
    SCORED_TOKEN_RE
        .captures_iter(summary)
        .map(|c| c[1].to_string())
        .collect()
}

fn method_phrase(plot_type: &str) -> String {
    match plot_type {
        "text_occlusion" => "the occlusion analysis".into(),
        "text_lime" => "the LIME analysis".into(),
        "vision_saliency" => "the saliency analysis".into(),
        "dataset_summary" => "the dataset summary".into(),
        "faithfulness_report" => "the faithfulness report".into(),
        other => format!("the {} artifact", other.replace('_', " ")),
    }
}

fn with_period(s: &str) -> String {
    let t = s.trim_end();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

fn quote_list(tokens: &[String]) -> String {
    tokens.iter().map(|t| format!("\"{t}\"")).collect::<Vec<_>>().join(", ")
}

fn comparison_sentence(occ: &RetrievedDoc, lime: &RetrievedDoc) -> String {
    let a = scored_tokens(&occ.summary_text);
    let b = scored_tokens(&lime.summary_text);
    let b_lower: BTreeSet<String> = b.iter().map(|t| t.to_lowercase()).collect();
    let a_lower: BTreeSet<String> = a.iter().map(|t| t.to_lowercase()).collect();
    let shared: Vec<String> = a.iter().filter(|t| b_lower.contains(&t.to_lowercase())).cloned().collect();
    let only_a: Vec<String> = a.iter().filter(|t| !b_lower.contains(&t.to_lowercase())).cloned().collect();
    let only_b: Vec<String> = b.iter().filter(|t| !a_lower.contains(&t.to_lowercase())).cloned().collect();

    let mut parts = Vec::new();
    if shared.is_empty() {
        parts.push("The occlusion and LIME results identified no shared top words".to_string());
    } else {
        parts.push(format!("Both the occlusion and LIME results identified {}", quote_list(&shared)));
    }
    if !only_a.is_empty() {
        parts.push(format!("only the occlusion analysis identified {}", quote_list(&only_a)));
    }
    if !only_b.is_empty() {
        parts.push(format!("only the LIME analysis identified {}", quote_list(&only_b)));
    }
    format!("{}.", parts.join("; "))
}

/// Pairs of (occlusion, LIME) docs to compare: same sample first, best score first.
fn comparison_pairs(docs: &[RetrievedDoc]) -> Vec<(&RetrievedDoc, &RetrievedDoc)> {
    let mut pairs = Vec::new();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    for occ in docs.iter().filter(|d| d.plot_type == "text_occlusion") {
        let Some(sample) = occ.sample_id.as_deref() else { continue };
        if used.contains(sample) {
            continue;
        }
        if let Some(lime) = docs
            .iter()
            .find(|d| d.plot_type == "text_lime" && d.sample_id.as_deref() == Some(sample))
        {
            used.insert(sample);
            pairs.push((occ, lime));
        }
    }
    pairs
}

/// Copies retrieved content only: one "According to ..." sentence per doc with
/// its numeric facts, plus a comparison of occlusion and LIME findings under
/// the constrained strategy.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator;

impl ExtractiveGenerator {
    pub fn render(bundle: &PromptBundle) -> String {
        if bundle.docs.is_empty() {
            return INSUFFICIENT_EVIDENCE.to_string();
        }
        let mut sentences = Vec::new();
        for doc in &bundle.docs {
            sentences.push(with_period(&format!(
                "According to {}, {}",
                method_phrase(&doc.plot_type),
                doc.summary_text
            )));
            if !doc.numeric_facts.is_empty() {
                let facts = doc
                    .numeric_facts
                    .iter()
                    .map(|(k, v)| format!("{k} = {v}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                sentences.push(format!("Reported values: {facts}."));
            }
        }
        if bundle.strategy == Strategy::Constrained {
            let terms: BTreeSet<String> = bundle.docs.iter().map(|d| method_term(&d.plot_type)).collect();
            if terms.contains("occlusion") && terms.contains("lime") {
                let pairs = comparison_pairs(&bundle.docs);
                if pairs.is_empty() {
                    sentences.push(
                        "The retrieved occlusion and LIME results concern different samples, so they are not compared."
                            .to_string(),
                    );
                }
                for (occ, lime) in pairs {
                    sentences.push(comparison_sentence(occ, lime));
                }
            }
        }
        sentences.join(" ")
    }
}

impl AnswerGenerator for ExtractiveGenerator {
    fn identifier(&self) -> &str {
        "extractive"
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, GeneratorError> {
        Ok(Self::render(bundle))
    }
}

/// Replays fixed responses keyed by question text.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    responses: BTreeMap<String, String>,
    fallback: Option<String>,
}

impl ScriptedGenerator {
    pub fn new(responses: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { responses: responses.into_iter().collect(), fallback: None }
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }
}

impl AnswerGenerator for ScriptedGenerator {
    fn identifier(&self) -> &str {
        "scripted"
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, GeneratorError> {
        self.responses
            .get(&bundle.question)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| GeneratorError::Unavailable(format!("no scripted response for {:?}", bundle.question)))
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// OpenAI-compatible `/chat/completions` client; one call per answer at temperature 0.
pub struct ChatCompletionGenerator {
    url: String,
    api_key: String,
    model: String,
    agent: ureq::Agent,
}

impl ChatCompletionGenerator {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { url: url.into(), api_key: api_key.into(), model: model.into(), agent }
    }
}

impl AnswerGenerator for ChatCompletionGenerator {
    fn identifier(&self) -> &str {
        &self.model
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, GeneratorError> {
        let user = bundle.render_user_message();
        let request = ChatRequest {
            model: &self.model,
            temperature: 0.0,
            messages: vec![
                ChatMessage { role: "system", content: &bundle.system_prompt },
                ChatMessage { role: "user", content: &user },
            ],
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| GeneratorError::Unavailable(e.to_string()))?;
        let body: ChatCompletion = resp
            .body_mut()
            .read_json()
            .map_err(|e| GeneratorError::BadResponse(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GeneratorError::BadResponse("no message content".into()))
    }
}
