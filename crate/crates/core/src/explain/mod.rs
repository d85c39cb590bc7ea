//! Per-sample explanation algorithms.
//!
//! * [`occlusion_explain`]: leave-one-word-out probability drop.
//! * [`lime_explain`]: weighted ridge surrogate over random word-removal masks.
//! * [`saliency_map`]: sliding-patch occlusion over a 2-D image.
//! * [`compare_methods`]: agreement statistics between two text explanations.

mod compare;
mod lime;
mod occlusion;
mod saliency;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use compare::{compare_methods, AgreementReport};
pub use lime::{lime_explain, LimeParams};
pub use occlusion::occlusion_explain;
pub use saliency::{matrix_from_rows, saliency_map, SaliencyMap};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("text has no tokens to explain")]
    EmptyText,
    #[error("all sampled perturbation masks were identical")]
    DegenerateNeighbourhood,
    #[error("patch size {patch} does not fit a {rows}x{cols} image")]
    PatchTooLarge { patch: usize, rows: usize, cols: usize },
    #[error("cannot compare explanations of different samples ({0} vs {1})")]
    SampleMismatch(String, String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label {0:?} is not produced by the model")]
    UnknownLabel(String),
    #[error("surrogate fit failed: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Text explanation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Occlusion,
    Lime,
}

impl Method {
    /// Artifact type tag used in storage and retrieval.
    pub fn plot_type(self) -> &'static str {
        match self {
            Method::Occlusion => "text_occlusion",
            Method::Lime => "text_lime",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Occlusion => "occlusion",
            Method::Lime => "lime",
        }
    }

    /// Human-readable name, e.g. for titles.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Occlusion => "Occlusion",
            Method::Lime => "LIME",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "occlusion" => Ok(Method::Occlusion),
            "lime" => Ok(Method::Lime),
            other => Err(ExplainError::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// A text to explain plus its stable identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
}

impl TextSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub token: String,
    pub position: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub sample_id: String,
    pub method: Method,
    pub target_class: String,
    pub baseline_confidence: f64,
    /// Sorted by |importance| descending, ties by position ascending.
    pub attributions: Vec<Attribution>,
    pub params: BTreeMap<String, serde_json::Value>,
    pub model_id: String,
    /// RFC 3339.
    pub created_at: String,
}

impl ExplanationResult {
    /// The `n` strongest attributions.
    pub fn top(&self, n: usize) -> &[Attribution] {
        &self.attributions[..n.min(self.attributions.len())]
    }

    /// Whether the attribution list satisfies the ordering invariant.
    pub fn is_canonically_sorted(&self) -> bool {
        self.attributions
            .windows(2)
            .all(|w| attribution_order(&w[0], &w[1]) != std::cmp::Ordering::Greater)
    }
}

pub(crate) fn attribution_order(a: &Attribution, b: &Attribution) -> std::cmp::Ordering {
    b.importance
        .abs()
        .total_cmp(&a.importance.abs())
        .then(a.position.cmp(&b.position))
}

pub(crate) fn sort_attributions(attrs: &mut [Attribution]) {
    attrs.sort_by(attribution_order);
}

pub fn timestamp(at: DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Millis, true)
}
