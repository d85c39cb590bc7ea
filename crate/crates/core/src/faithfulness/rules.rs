//! Lexical extraction rules shared by the evaluator and the answer citation logic.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::rag::RetrievedDoc;
use crate::text::{normalized_tokens, tokenize};

/// Bumped whenever any extraction rule below changes.
pub const RULES_VERSION: &str = "1";

pub const GROUNDING_TOLERANCE: f64 = 5e-4;
pub const CUE_WINDOW: usize = 5;
const CONTEXT_CHARS: usize = 40;

pub const METHOD_TERMS: &[&str] = &["lime", "occlusion", "saliency"];
pub const CUE_WORDS: &[&str] = &["important", "importance", "top", "contributor", "contributing", "key", "driver"];

const ORDINAL_WORDS: &[&str] = &[
    "top", "rank", "ranked", "sample", "samples", "row", "rows", "no", "number", "item", "query", "position", "step",
    "#",
];

/// Function words and method/answer vocabulary that never count as feature names.
const NON_FEATURE_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "from", "by", "with", "as", "is", "are",
    "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "there", "their", "they", "than", "not",
    "no", "do", "does", "did", "has", "have", "had", "which", "what", "most", "more", "also", "both", "only", "each",
    "all", "any", "other", "into", "over", "under", "about", "very", "so", "such", "while", "according", "analysis",
    "analyses", "lime", "occlusion", "saliency", "method", "methods", "result", "results", "identified", "shows",
    "indicates", "ranked", "assigns", "dataset", "summary", "faithfulness", "report", "artifact", "artifacts",
    "reported", "value", "values", "word", "words", "feature", "features", "token", "tokens", "target", "score",
    "scores", "share", "shared", "samples", "sample", "concern", "different", "compared", "retrieved", "explanation",
    "explanations", "evidence", "enough", "contain", "answer", "question",
];

static METHOD_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(lime|occlusion|saliency)\b").unwrap());

static ATTRIBUTION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(according to|shows|indicates|identified|ranked|assigns|analysis|results?)\b").unwrap()
});

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([+\-\u{2212}]?)(\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)(%?)").unwrap());

static QUOTED_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?:^|[^\p{L}\p{N}])[`'"‘“]([\p{L}\p{N}][\p{L}\p{N}_\-]*)[`'"’”]"#).unwrap()
});

static SENTENCE_END_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]+\s+").unwrap());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericClaim {
    pub value: f64,
    pub context: String,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn last_word(before: &str) -> &str {
    let trimmed = before.trim_end();
    if trimmed.ends_with('#') {
        return "#";
    }
    let trimmed = trimmed.trim_end_matches(|c: char| !is_word_char(c));
    let start = trimmed
        .char_indices()
        .rev()
        .find(|(_, c)| !is_word_char(*c))
        .map_or(0, |(i, c)| i + c.len_utf8());
    &trimmed[start..]
}

fn context_window(text: &str, start: usize, end: usize) -> String {
    let lo = text[..start]
        .char_indices()
        .rev()
        .nth(CONTEXT_CHARS.saturating_sub(1))
        .map_or(0, |(i, _)| i);
    let hi = text[end..]
        .char_indices()
        .nth(CONTEXT_CHARS)
        .map_or(text.len(), |(i, _)| end + i);
    text[lo..hi].to_string()
}

/// Signed decimals, integers and percentages (as fractions). Integers in
/// ordinal phrases such as "top 3" or "sample #5" are skipped.
pub fn extract_numeric_claims(text: &str) -> Vec<NumericClaim> {
    let mut out = Vec::new();
    for caps in NUMBER_RE.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let sign = caps.get(1).unwrap();
        let digits = caps.get(2).unwrap();
        let percent = !caps.get(3).unwrap().as_str().is_empty();

        let prev = text[..whole.start()].chars().next_back();
        let (negative, num_start) = match sign.as_str() {
            "" => (false, digits.start()),
            // a sign glued to a preceding word is a hyphen
            _ if prev.is_some_and(is_word_char) => (false, digits.start()),
            s => (s != "+", whole.start()),
        };
        let before = text[..num_start].chars().next_back();
        if before.is_some_and(|c| is_word_char(c) || c == '.' || c == ',') {
            continue;
        }
        let after = text[digits.end()..].chars().next();
        if after.is_some_and(is_word_char) {
            continue;
        }
        let raw = digits.as_str().replace(',', "");
        let Ok(mut value) = raw.parse::<f64>() else { continue };
        let is_integer = !raw.contains('.');
        if is_integer && !percent && ORDINAL_WORDS.contains(&last_word(&text[..num_start]).to_lowercase().as_str()) {
            continue;
        }
        if negative {
            value = -value;
        }
        if percent {
            value /= 100.0;
        }
        out.push(NumericClaim { value, context: context_window(text, whole.start(), whole.end()) });
    }
    out
}

/// Numeric literals appearing in a doc's summary text, keywords and facts.
fn doc_values(doc: &RetrievedDoc) -> Vec<f64> {
    let mut values: Vec<f64> = doc.numeric_facts.values().copied().collect();
    values.extend(extract_numeric_claims(&doc.summary_text).into_iter().map(|c| c.value));
    // literals in ordinal phrases still count as present in the doc
    for caps in NUMBER_RE.captures_iter(&doc.summary_text) {
        if let Ok(v) = caps[2].replace(',', "").parse::<f64>() {
            values.push(v);
        }
    }
    values
}

/// `(grounded, total)` for a list of claims.
pub fn score_grounding(
    claims: &[NumericClaim],
    docs: &[RetrievedDoc],
    truth: &super::GroundTruthPack,
) -> (usize, usize) {
    let mut known: Vec<f64> = docs.iter().flat_map(doc_values).collect();
    known.extend(truth.importance_scores.iter().map(|s| s.value));
    known.extend(truth.dataset_facts.values().copied());
    let grounded = claims
        .iter()
        .filter(|c| known.iter().any(|k| (k - c.value).abs() <= GROUNDING_TOLERANCE))
        .count();
    (grounded, claims.len())
}

/// Single tokens enclosed in quotation marks, lowercased.
pub fn quoted_tokens(text: &str) -> Vec<String> {
    QUOTED_RE
        .captures_iter(text)
        .map(|c| c[1].to_lowercase())
        .collect()
}

fn has_letter(s: &str) -> bool {
    s.chars().any(char::is_alphabetic)
}

/// Feature names the text presents as important: quoted single tokens, plus
/// vocabulary tokens within [`CUE_WINDOW`] tokens of a cue word.
/// Lowercased and deduplicated; quoted tokens come first.
pub fn extract_feature_mentions(text: &str, vocabulary: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let push = |t: String, out: &mut Vec<String>| {
        if !out.contains(&t) {
            out.push(t);
        }
    };
    for q in quoted_tokens(text) {
        push(q, &mut out);
    }
    let tokens: Vec<String> = tokenize(text).into_iter().map(|t| t.normalized).collect();
    for (i, tok) in tokens.iter().enumerate() {
        if !CUE_WORDS.contains(&tok.as_str()) {
            continue;
        }
        let lo = i.saturating_sub(CUE_WINDOW);
        let hi = (i + CUE_WINDOW).min(tokens.len().saturating_sub(1));
        for cand in &tokens[lo..=hi] {
            if CUE_WORDS.contains(&cand.as_str()) || NON_FEATURE_WORDS.contains(&cand.as_str()) || !has_letter(cand) {
                continue;
            }
            if vocabulary.contains(cand) {
                push(cand.clone(), &mut out);
            }
        }
    }
    out
}

/// Every normalized token a retrieved doc makes available.
pub fn doc_tokens(docs: &[RetrievedDoc]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for d in docs {
        out.extend(normalized_tokens(&d.summary_text));
        out.extend(normalized_tokens(&d.title));
        for k in &d.keywords {
            out.extend(normalized_tokens(k));
        }
        out.insert(d.plot_type.to_lowercase());
        out.extend(d.plot_type.split('_').map(str::to_lowercase));
        out.extend(d.numeric_facts.keys().map(|k| k.to_lowercase()));
    }
    out
}

/// Mentions absent from every retrieved doc.
pub fn hallucinated_features(mentions: &[String], docs: &[RetrievedDoc]) -> Vec<String> {
    let known = doc_tokens(docs);
    mentions.iter().filter(|m| !known.contains(*m)).cloned().collect()
}

/// Split on sentence-final punctuation followed by whitespace.
pub fn sentences(text: &str) -> Vec<&str> {
    SENTENCE_END_RE
        .split(text)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Method-term occurrences in sentences that also carry attribution phrasing.
pub fn count_method_citations(text: &str) -> usize {
    sentences(text)
        .into_iter()
        .filter(|s| ATTRIBUTION_RE.is_match(s))
        .map(|s| METHOD_RE.find_iter(s).count())
        .sum()
}

/// The lexicon term that refers to artifacts of a plot type.
pub fn method_term(plot_type: &str) -> String {
    match plot_type {
        "text_occlusion" => "occlusion".into(),
        "text_lime" => "lime".into(),
        "vision_saliency" => "saliency".into(),
        "dataset_summary" => "dataset".into(),
        "faithfulness_report" => "faithfulness".into(),
        other => other.rsplit('_').next().unwrap_or(other).to_lowercase(),
    }
}

fn mentions_word(sentence_lower: &str, word: &str) -> bool {
    sentence_lower
        .match_indices(word)
        .any(|(i, _)| {
            let before = sentence_lower[..i].chars().next_back();
            let after = sentence_lower[i + word.len()..].chars().next();
            !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
        })
}

/// Ids of retrieved docs the text cites. A doc is cited when a sentence with
/// attribution phrasing names its method term; when several docs share that
/// term, the ones whose title or summary appears in the text are preferred.
pub fn cited_artifact_ids(text: &str, docs: &[RetrievedDoc]) -> Vec<String> {
    let lower = text.to_lowercase();
    let cited_terms: BTreeSet<String> = sentences(text)
        .into_iter()
        .filter(|s| ATTRIBUTION_RE.is_match(s))
        .flat_map(|s| {
            let sl = s.to_lowercase();
            docs.iter()
                .map(|d| method_term(&d.plot_type))
                .filter(move |t| mentions_word(&sl, t))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut out = Vec::new();
    for term in &cited_terms {
        let candidates: Vec<&RetrievedDoc> = docs.iter().filter(|d| &method_term(&d.plot_type) == term).collect();
        let specific: Vec<&&RetrievedDoc> = candidates
            .iter()
            .filter(|d| {
                (!d.summary_text.is_empty() && lower.contains(&d.summary_text.to_lowercase()))
                    || (!d.title.is_empty() && lower.contains(&d.title.to_lowercase()))
            })
            .collect();
        let chosen: Vec<&RetrievedDoc> = if specific.is_empty() {
            candidates
        } else {
            specific.into_iter().copied().collect()
        };
        out.extend(chosen.into_iter().map(|d| d.artifact_id.clone()));
    }
    let order: Vec<&str> = docs.iter().map(|d| d.artifact_id.as_str()).collect();
    out.sort_by_key(|id| order.iter().position(|o| o == id));
    out.dedup();
    out
}

pub fn is_non_feature_word(token: &str) -> bool {
    NON_FEATURE_WORDS.contains(&token) || CUE_WORDS.contains(&token)
}
