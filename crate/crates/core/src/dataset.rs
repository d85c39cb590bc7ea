//! CSV ingestion and dataset-level statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, TextClassifier};
use crate::store::StorageRef;
use crate::text::normalized_tokens;

pub const TOP_KEYWORDS: usize = 10;
pub const UNASSIGNED_ASSET: &str = "unassigned";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: u64, reason: String },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub row_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub dataset_id: String,
    pub rows: Vec<DatasetRow>,
    pub source_ref: StorageRef,
}

impl DatasetHandle {
    pub fn row(&self, row_id: &str) -> Option<&DatasetRow> {
        self.rows.iter().find(|r| r.row_id == row_id)
    }

    pub fn sample_id(&self, row_id: &str) -> String {
        format!("{}:{row_id}", self.dataset_id)
    }
}

/// Parse a headered CSV with a required `text` column and optional `asset`
/// and `id` columns. Rows without an `id` are numbered from 1.
pub fn parse_rows(raw: &[u8]) -> Result<Vec<DatasetRow>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::MalformedCsv { line: 1, reason: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let text_col = col("text").ok_or_else(|| DatasetError::MissingColumn("text".into()))?;
    let asset_col = col("asset");
    let id_col = col("id");

    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DatasetError::MalformedCsv {
            line: e.position().map_or(i as u64 + 2, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or_default().to_string();
        let row_id = match id_col {
            Some(c) => field(c),
            None => (i + 1).to_string(),
        };
        if row_id.is_empty() {
            return Err(DatasetError::MalformedCsv { line, reason: "empty id".into() });
        }
        if !row_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(DatasetError::MalformedCsv { line, reason: format!("invalid id {row_id:?}") });
        }
        if !seen.insert(row_id.clone()) {
            return Err(DatasetError::MalformedCsv { line, reason: format!("duplicate id {row_id:?}") });
        }
        let asset = asset_col.map(field).filter(|a| !a.is_empty());
        rows.push(DatasetRow { row_id, text: field(text_col), asset });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordScore {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_rows: usize,
    pub class_distribution: BTreeMap<String, usize>,
    pub top_keywords: BTreeMap<String, Vec<KeywordScore>>,
    /// asset -> label -> count; rows without an asset fall under `unassigned`.
    pub per_asset: BTreeMap<String, BTreeMap<String, usize>>,
    /// asset -> label -> per-row probabilities of that label, in row order.
    pub per_asset_probabilities: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

/// Classify every row and aggregate.
pub fn compute_stats(handle: &DatasetHandle, model: &dyn TextClassifier) -> Result<DatasetStats, DatasetError> {
    let labels = model.labels().to_vec();
    let texts: Vec<String> = handle.rows.iter().map(|r| r.text.clone()).collect();
    let predictions = model.classify_batch(&texts)?;

    let zero_counts = || labels.iter().map(|l| (l.clone(), 0usize)).collect::<BTreeMap<_, _>>();
    let mut class_distribution = zero_counts();
    let mut per_asset: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut per_asset_probabilities: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut docs_by_label: BTreeMap<String, Vec<BTreeSet<String>>> = BTreeMap::new();

    for (row, pred) in handle.rows.iter().zip(&predictions) {
        *class_distribution.entry(pred.label.clone()).or_default() += 1;
        let asset = row.asset.clone().unwrap_or_else(|| UNASSIGNED_ASSET.to_string());
        *per_asset.entry(asset.clone()).or_insert_with(zero_counts).entry(pred.label.clone()).or_default() += 1;
        let probs = per_asset_probabilities.entry(asset).or_default();
        for l in &labels {
            probs.entry(l.clone()).or_default().push(pred.prob(l));
        }
        docs_by_label
            .entry(pred.label.clone())
            .or_default()
            .push(normalized_tokens(&row.text).into_iter().collect());
    }

    let n = handle.rows.len();
    let mut top_keywords = BTreeMap::new();
    for label in &labels {
        let inside = docs_by_label.get(label).map(Vec::as_slice).unwrap_or_default();
        let outside: Vec<&BTreeSet<String>> = docs_by_label
            .iter()
            .filter(|(l, _)| *l != label)
            .flat_map(|(_, d)| d)
            .collect();
        let mut scores = Vec::new();
        if !inside.is_empty() {
            let vocab: BTreeSet<&String> = inside.iter().flatten().collect();
            for tok in vocab {
                let df_in = inside.iter().filter(|d| d.contains(tok)).count() as f64 / inside.len() as f64;
                let df_out = if outside.is_empty() {
                    0.0
                } else {
                    outside.iter().filter(|d| d.contains(tok)).count() as f64 / outside.len() as f64
                };
                let score = df_in - df_out;
                if score > 0.0 {
                    scores.push(KeywordScore { token: tok.clone(), score });
                }
            }
        }
        scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token)));
        scores.truncate(TOP_KEYWORDS);
        top_keywords.insert(label.clone(), scores);
    }

    Ok(DatasetStats { n_rows: n, class_distribution, top_keywords, per_asset, per_asset_probabilities })
}

/// Retrieval text for a dataset summary artifact.
pub fn summary_text(handle: &DatasetHandle, stats: &DatasetStats) -> String {
    let counts = stats
        .class_distribution
        .iter()
        .map(|(l, c)| format!("{l} {c}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut out = format!(
        "Dataset {} contains {} headlines. Class distribution: {counts}.",
        handle.dataset_id, stats.n_rows
    );
    if let Some((label, count)) = stats.class_distribution.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
        if *count > 0 {
            out.push_str(&format!(" The most common class is {label}."));
        }
    }
    for (label, kws) in &stats.top_keywords {
        if kws.is_empty() {
            continue;
        }
        let words = kws.iter().map(|k| k.token.as_str()).collect::<Vec<_>>().join(", ");
        out.push_str(&format!(" Top {label} keywords: {words}."));
    }
    let assets: Vec<&str> = stats.per_asset.keys().map(String::as_str).collect();
    if !assets.is_empty() {
        out.push_str(&format!(" Assets: {}.", assets.join(", ")));
    }
    out
}

/// `n_rows` plus one `count_<label>` fact per class.
pub fn numeric_facts(stats: &DatasetStats) -> BTreeMap<String, f64> {
    let mut facts = BTreeMap::from([("n_rows".to_string(), stats.n_rows as f64)]);
    for (l, c) in &stats.class_distribution {
        facts.insert(format!("count_{l}"), *c as f64);
    }
    facts
}
