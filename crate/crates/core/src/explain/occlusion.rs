use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use super::{sort_attributions, timestamp, Attribution, ExplainError, ExplanationResult, Method, TextSample};
use crate::model::TextClassifier;
use crate::text::{join_kept, tokenize};

/// Leave-one-word-out attribution.
///
/// The importance of word `i` is `P(target | text) - P(target | text without i)`,
/// where removal deletes the word and rejoins the rest with single spaces.
/// `target` defaults to the model's argmax on the unperturbed text.
pub fn occlusion_explain(
    model: &dyn TextClassifier,
    sample: &TextSample,
    target: Option<&str>,
    created_at: DateTime<Utc>,
) -> Result<ExplanationResult, ExplainError> {
    let tokens = tokenize(&sample.text);
    if tokens.is_empty() {
        return Err(ExplainError::EmptyText);
    }

    let original = model.classify(&sample.text)?;
    let target = match target {
        Some(t) if !model.labels().iter().any(|l| l == t) => {
            return Err(ExplainError::UnknownLabel(t.to_string()))
        }
        Some(t) => t.to_string(),
        None => original.label.clone(),
    };
    let baseline = original.prob(&target);

    let occluded: Vec<String> = (0..tokens.len())
        .map(|i| join_kept(&tokens, |j| j != i))
        .collect();
    let predictions = model.classify_batch(&occluded)?;

    let mut attributions: Vec<Attribution> = tokens
        .iter()
        .zip(&predictions)
        .enumerate()
        .map(|(position, (tok, pred))| Attribution {
            token: tok.surface.clone(),
            position,
            importance: baseline - pred.prob(&target),
        })
        .collect();
    sort_attributions(&mut attributions);

    let mut params = BTreeMap::new();
    params.insert("removal".to_string(), serde_json::Value::from("delete"));

    Ok(ExplanationResult {
        sample_id: sample.id.clone(),
        method: Method::Occlusion,
        target_class: target,
        baseline_confidence: baseline,
        attributions,
        params,
        model_id: model.identifier().to_string(),
        created_at: timestamp(created_at),
    })
}
