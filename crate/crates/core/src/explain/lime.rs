use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sort_attributions, timestamp, Attribution, ExplainError, ExplanationResult, Method, TextSample};
use crate::model::TextClassifier;
use crate::text::{join_kept, tokenize, Token};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeParams {
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Width of the exponential kernel over cosine distance.
    pub kernel_width: f64,
    pub ridge_lambda: f64,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            k: 7,
            n_samples: 1000,
            seed: 0,
            kernel_width: 0.25,
            ridge_lambda: 1e-3,
        }
    }
}

impl LimeParams {
    fn validate(&self) -> Result<(), ExplainError> {
        if self.k == 0 {
            return Err(ExplainError::InvalidParameter("k must be at least 1".into()));
        }
        if self.n_samples < MIN_SAMPLES {
            return Err(ExplainError::InvalidParameter(format!(
                "n_samples must be at least {MIN_SAMPLES}, got {}",
                self.n_samples
            )));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(ExplainError::InvalidParameter("kernel_width must be positive".into()));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(ExplainError::InvalidParameter("ridge_lambda must be non-negative".into()));
        }
        Ok(())
    }
}

fn sample_masks(n_tokens: usize, n_samples: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| (0..n_tokens).map(|_| rng.random_bool(0.5)).collect())
        .collect()
}

fn all_identical(masks: &[Vec<bool>]) -> bool {
    masks.windows(2).all(|w| w[0] == w[1])
}

/// Exponential kernel over the cosine distance between the all-ones mask
/// and `mask`. An all-zero mask has cosine similarity 0.
pub(crate) fn kernel_weight(mask: &[bool], kernel_width: f64) -> f64 {
    let kept = mask.iter().filter(|&&b| b).count() as f64;
    let cosine = if kept == 0.0 {
        0.0
    } else {
        (kept / mask.len() as f64).sqrt()
    };
    let distance = 1.0 - cosine;
    (-(distance * distance) / (kernel_width * kernel_width)).exp()
}

/// Weighted ridge regression with an unpenalized intercept.
///
/// Returns `(intercept, coefficients)`.
pub(crate) fn weighted_ridge(
    masks: &[Vec<bool>],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>), ExplainError> {
    let d = masks.first().map_or(0, Vec::len);
    let dim = d + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut row = vec![0.0; dim];
    for ((mask, &y), &w) in masks.iter().zip(targets).zip(weights) {
        row[0] = 1.0;
        for (slot, &keep) in row[1..].iter_mut().zip(mask) {
            *slot = if keep { 1.0 } else { 0.0 };
        }
        for i in 0..dim {
            if row[i] == 0.0 {
                continue;
            }
            rhs[i] += w * row[i] * y;
            for j in 0..dim {
                gram[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    for i in 1..dim {
        gram[(i, i)] += lambda;
    }
    let solution = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| ExplainError::Numerical("normal equations are singular".into()))?,
    };
    Ok((solution[0], solution.iter().skip(1).copied().collect()))
}

fn perturbed_text(tokens: &[Token], mask: &[bool]) -> String {
    join_kept(tokens, |i| mask[i])
}

/// Local linear surrogate over random word removals.
///
/// Each perturbation keeps every word independently with probability 0.5
/// (seeded), is scored on the target class, and weighted by an exponential
/// kernel on cosine distance to the original. The `k` largest-magnitude
/// ridge coefficients become the attributions.
pub fn lime_explain(
    model: &dyn TextClassifier,
    sample: &TextSample,
    params: &LimeParams,
    created_at: DateTime<Utc>,
) -> Result<ExplanationResult, ExplainError> {
    params.validate()?;
    let tokens = tokenize(&sample.text);
    if tokens.is_empty() {
        return Err(ExplainError::EmptyText);
    }

    let original = model.classify(&sample.text)?;
    let target = original.label.clone();
    let baseline = original.prob(&target);

    let mut used_seed = params.seed;
    let mut masks = sample_masks(tokens.len(), params.n_samples, used_seed);
    if all_identical(&masks) {
        used_seed = params.seed.wrapping_add(1);
        masks = sample_masks(tokens.len(), params.n_samples, used_seed);
        if all_identical(&masks) {
            return Err(ExplainError::DegenerateNeighbourhood);
        }
    }

    // Score each distinct mask once; the model is deterministic.
    let mut unique: HashMap<&[bool], usize> = HashMap::new();
    let mut texts = Vec::new();
    for mask in &masks {
        unique.entry(mask.as_slice()).or_insert_with(|| {
            texts.push(perturbed_text(&tokens, mask));
            texts.len() - 1
        });
    }
    let predictions = model.classify_batch(&texts)?;
    let targets: Vec<f64> = masks
        .iter()
        .map(|m| predictions[unique[m.as_slice()]].prob(&target))
        .collect();
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| kernel_weight(m, params.kernel_width))
        .collect();

    let (_, coefficients) = weighted_ridge(&masks, &targets, &weights, params.ridge_lambda)?;

    let mut attributions: Vec<Attribution> = tokens
        .iter()
        .zip(&coefficients)
        .enumerate()
        .map(|(position, (tok, &importance))| Attribution {
            token: tok.surface.clone(),
            position,
            importance,
        })
        .collect();
    sort_attributions(&mut attributions);
    attributions.truncate(params.k);

    let mut record = BTreeMap::new();
    record.insert("k".to_string(), serde_json::Value::from(params.k));
    record.insert("n_samples".to_string(), serde_json::Value::from(params.n_samples));
    record.insert("seed".to_string(), serde_json::Value::from(params.seed));
    record.insert("kernel_width".to_string(), serde_json::Value::from(params.kernel_width));
    record.insert("ridge_lambda".to_string(), serde_json::Value::from(params.ridge_lambda));
    if used_seed != params.seed {
        record.insert("resampled_seed".to_string(), serde_json::Value::from(used_seed));
    }

    Ok(ExplanationResult {
        sample_id: sample.id.clone(),
        method: Method::Lime,
        target_class: target,
        baseline_confidence: baseline,
        attributions,
        params: record,
        model_id: model.identifier().to_string(),
        created_at: timestamp(created_at),
    })
}
