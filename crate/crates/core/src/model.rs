//! Prediction contract for text classifiers and patch detectors.
//!
//! Everything downstream (explainers, dataset statistics) talks to models
//! through [`TextClassifier`] and [`PatchDetector`]. Two offline
//! implementations ship here: a softmax-over-lexicon classifier and a
//! constant classifier. [`RemoteClassifier`] speaks a small JSON protocol to
//! an external model server.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model server unavailable: {0}")]
    Unavailable(String),
    #[error("malformed model response: {0}")]
    BadResponse(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Class-probability distribution for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub probabilities: BTreeMap<String, f64>,
}

impl Prediction {
    /// Build a prediction whose label is the argmax; ties go to the
    /// lexicographically smallest label.
    pub fn from_probabilities(probabilities: BTreeMap<String, f64>) -> Self {
        let mut best: Option<(&String, f64)> = None;
        for (label, &p) in &probabilities {
            match best {
                Some((_, bp)) if p <= bp => {}
                _ => best = Some((label, p)),
            }
        }
        let label = best.map(|(l, _)| l.clone()).unwrap_or_default();
        Self { label, probabilities }
    }

    /// Probability of `label`, 0 when the label is unknown.
    pub fn prob(&self, label: &str) -> f64 {
        self.probabilities.get(label).copied().unwrap_or(0.0)
    }
}

/// A deterministic text classifier.
pub trait TextClassifier: Send + Sync {
    /// Model name recorded in artifact provenance.
    fn identifier(&self) -> &str;

    fn labels(&self) -> &[String];

    fn classify(&self, text: &str) -> Result<Prediction, ModelError>;

    /// Element `i` of the output equals `classify(texts[i])`.
    fn classify_batch(&self, texts: &[String]) -> Result<Vec<Prediction>, ModelError> {
        texts.iter().map(|t| self.classify(t)).collect()
    }
}

fn softmax(labels: &[String], logits: &[f64]) -> BTreeMap<String, f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    labels
        .iter()
        .zip(exps)
        .map(|(l, e)| (l.clone(), e / total))
        .collect()
}

/// Bag-of-words classifier: softmax of summed per-label token weights.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    identifier: String,
    labels: Vec<String>,
    weights: HashMap<String, Vec<f64>>,
    temperature: f64,
}

impl LexiconClassifier {
    pub fn new(
        identifier: impl Into<String>,
        labels: Vec<String>,
        temperature: f64,
    ) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::Config("label set is empty".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ModelError::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            identifier: identifier.into(),
            labels,
            weights: HashMap::new(),
            temperature,
        })
    }

    /// Set the weight vector of `token` (matched lowercase). `weights` is
    /// indexed like the label set.
    pub fn with_weights(mut self, token: &str, weights: &[f64]) -> Result<Self, ModelError> {
        if weights.len() != self.labels.len() {
            return Err(ModelError::Config(format!(
                "token {token:?}: expected {} weights, got {}",
                self.labels.len(),
                weights.len()
            )));
        }
        self.weights.insert(token.to_lowercase(), weights.to_vec());
        Ok(self)
    }

    /// Set a weight on a single label, zero elsewhere.
    pub fn with_weight(self, token: &str, label: &str, weight: f64) -> Result<Self, ModelError> {
        let idx = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ModelError::Config(format!("unknown label {label:?}")))?;
        let mut w = vec![0.0; self.labels.len()];
        w[idx] = weight;
        self.with_weights(token, &w)
    }

    /// Small financial-news lexicon over {negative, neutral, positive}.
    pub fn financial() -> Self {
        const POSITIVE: &[(&str, f64)] = &[
            ("growth", 1.5),
            ("strong", 1.0),
            ("outperformer", 1.8),
            ("outperform", 1.6),
            ("profit", 1.2),
            ("profits", 1.2),
            ("beat", 1.3),
            ("beats", 1.3),
            ("surge", 1.6),
            ("surges", 1.6),
            ("gain", 1.0),
            ("gains", 1.0),
            ("record", 0.9),
            ("upgrade", 1.4),
            ("upgraded", 1.4),
            ("rally", 1.3),
            ("rises", 0.9),
            ("higher", 0.8),
            ("expansion", 0.9),
            ("approval", 1.1),
            ("approved", 1.1),
            ("raises", 0.8),
            ("forecasts", 0.4),
            ("robust", 1.0),
            ("boost", 1.0),
        ];
        const NEGATIVE: &[(&str, f64)] = &[
            ("loss", 1.5),
            ("losses", 1.5),
            ("decline", 1.3),
            ("declines", 1.3),
            ("weak", 1.1),
            ("downgrade", 1.5),
            ("downgraded", 1.5),
            ("lawsuit", 1.4),
            ("plunge", 1.7),
            ("plunges", 1.7),
            ("falls", 1.0),
            ("cut", 0.9),
            ("cuts", 0.9),
            ("miss", 1.2),
            ("misses", 1.2),
            ("layoffs", 1.3),
            ("recall", 1.2),
            ("warning", 1.1),
            ("lower", 0.8),
            ("slump", 1.5),
            ("probe", 1.0),
            ("bankruptcy", 2.0),
            ("delays", 1.0),
        ];
        const NEUTRAL: &[(&str, f64)] = &[
            ("announces", 0.8),
            ("reports", 0.6),
            ("scheduled", 0.9),
            ("meeting", 0.8),
            ("conference", 0.7),
            ("appoints", 0.7),
            ("unchanged", 1.2),
            ("steady", 0.9),
            ("holds", 0.7),
            ("quarterly", 0.4),
        ];
        let labels = vec![
            "negative".to_string(),
            "neutral".to_string(),
            "positive".to_string(),
        ];
        let mut model = Self::new("lexicon-financial-v1", labels, 1.0)
            .expect("static lexicon configuration is valid");
        let groups = [("negative", NEGATIVE), ("neutral", NEUTRAL), ("positive", POSITIVE)];
        for (label, words) in groups {
            for &(word, w) in words {
                model = model
                    .with_weight(word, label, w)
                    .expect("static lexicon labels are valid");
            }
        }
        model
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl TextClassifier for LexiconClassifier {
    fn identifier(&self) -> &str {
        &self.identifier
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn classify(&self, text: &str) -> Result<Prediction, ModelError> {
        // Count first and sum in sorted key order so the result is exactly
        // invariant under token permutation.
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(tok.normalized).or_default() += 1;
        }
        let mut sums = vec![0.0; self.labels.len()];
        for (tok, n) in &counts {
            if let Some(w) = self.weights.get(tok) {
                for (s, wi) in sums.iter_mut().zip(w) {
                    *s += wi * f64::from(*n);
                }
            }
        }
        let logits: Vec<f64> = sums.iter().map(|s| s / self.temperature).collect();
        Ok(Prediction::from_probabilities(softmax(&self.labels, &logits)))
    }
}

/// Returns the same distribution for every input.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    identifier: String,
    labels: Vec<String>,
    prediction: Prediction,
}

impl ConstantClassifier {
    pub fn new(probabilities: BTreeMap<String, f64>) -> Self {
        let labels = probabilities.keys().cloned().collect();
        Self {
            identifier: "constant".into(),
            labels,
            prediction: Prediction::from_probabilities(probabilities),
        }
    }
}

impl TextClassifier for ConstantClassifier {
    fn identifier(&self) -> &str {
        &self.identifier
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn classify(&self, _text: &str) -> Result<Prediction, ModelError> {
        Ok(self.prediction.clone())
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct RemoteResponse {
    predictions: Vec<RemotePrediction>,
}

#[derive(Deserialize)]
struct RemotePrediction {
    #[allow(dead_code)]
    label: String,
    probabilities: BTreeMap<String, f64>,
}

/// Classifier backed by an HTTP model server.
///
/// Wire format: `POST {"texts": [...]}` answered by
/// `{"predictions": [{"label": ..., "probabilities": {...}}]}`.
pub struct RemoteClassifier {
    identifier: String,
    labels: Vec<String>,
    url: String,
    agent: ureq::Agent,
}

impl RemoteClassifier {
    pub fn new(identifier: impl Into<String>, url: impl Into<String>, labels: Vec<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            identifier: identifier.into(),
            labels,
            url: url.into(),
            agent,
        }
    }
}

impl TextClassifier for RemoteClassifier {
    fn identifier(&self) -> &str {
        &self.identifier
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn classify(&self, text: &str) -> Result<Prediction, ModelError> {
        let mut out = self.classify_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| ModelError::BadResponse("empty prediction list".into()))
    }

    fn classify_batch(&self, texts: &[String]) -> Result<Vec<Prediction>, ModelError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(RemoteRequest { texts })
            .map_err(|e| ModelError::Unavailable(e.to_string()))?;
        let body: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ModelError::BadResponse(e.to_string()))?;
        if body.predictions.len() != texts.len() {
            return Err(ModelError::BadResponse(format!(
                "expected {} predictions, got {}",
                texts.len(),
                body.predictions.len()
            )));
        }
        // The label is recomputed locally so the argmax tie rule is uniform.
        Ok(body
            .predictions
            .into_iter()
            .map(|p| Prediction::from_probabilities(p.probabilities))
            .collect())
    }
}

/// Deterministic confidence over a 2-D image.
pub trait PatchDetector: Send + Sync {
    fn identifier(&self) -> &str;

    /// Confidence in [0, 1].
    fn confidence(&self, image: &Array2<f64>) -> f64;
}

/// Always reports the same confidence.
#[derive(Debug, Clone)]
pub struct ConstantDetector(pub f64);

impl PatchDetector for ConstantDetector {
    fn identifier(&self) -> &str {
        "constant-detector"
    }

    fn confidence(&self, _image: &Array2<f64>) -> f64 {
        self.0.clamp(0.0, 1.0)
    }
}

/// Toy detector: mean intensity of a fixed rectangular region, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct RegionBrightnessDetector {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchDetector for RegionBrightnessDetector {
    fn identifier(&self) -> &str {
        "region-brightness"
    }

    fn confidence(&self, image: &Array2<f64>) -> f64 {
        let (rows, cols) = image.dim();
        let r1 = (self.top + self.height).min(rows);
        let c1 = (self.left + self.width).min(cols);
        if self.top >= r1 || self.left >= c1 {
            return 0.0;
        }
        let region = image.slice(ndarray::s![self.top..r1, self.left..c1]);
        let mean = region.sum() / region.len() as f64;
        mean.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_labels() -> Vec<String> {
        ["negative", "neutral", "positive"].map(String::from).to_vec()
    }

    fn stub() -> LexiconClassifier {
        LexiconClassifier::new("stub", three_labels(), 1.0)
            .unwrap()
            .with_weight("strong", "positive", 1.0)
            .unwrap()
            .with_weight("growth", "positive", 1.5)
            .unwrap()
    }

    #[test]
    fn empty_text_is_uniform() {
        let p = stub().classify("").unwrap();
        for v in p.probabilities.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // all tied: lexicographically first label wins
        assert_eq!(p.label, "negative");
    }

    #[test]
    fn softmax_matches_hand_computation() {
        // P(pos) = e^2.5 / (e^2.5 + 2) = 0.8590...
        let expected = 2.5f64.exp() / (2.5f64.exp() + 2.0);
        let p = stub().classify("strong growth").unwrap();
        assert!((p.prob("positive") - expected).abs() < 1e-12);
        assert!((p.prob("positive") - 0.859).abs() < 5e-4);
        assert_eq!(p.label, "positive");
        let total: f64 = p.probabilities.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn temperature_scales_logits() {
        let hot = LexiconClassifier::new("t", three_labels(), 2.0)
            .unwrap()
            .with_weight("growth", "positive", 2.0)
            .unwrap();
        let expected = 1f64.exp() / (1f64.exp() + 2.0);
        assert!((hot.classify("growth").unwrap().prob("positive") - expected).abs() < 1e-12);
    }

    #[test]
    fn classify_is_deterministic() {
        let m = LexiconClassifier::financial();
        let a = m.classify("Shares surge after record profit").unwrap();
        let b = m.classify("Shares surge after record profit").unwrap();
        assert_eq!(a, b);
        for (x, y) in a.probabilities.values().zip(b.probabilities.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn batch_equals_single_calls() {
        let m = LexiconClassifier::financial();
        assert!(m.classify_batch(&[]).unwrap().is_empty());
        let words = ["strong", "growth", "loss", "meeting", "the", "plunge", "record"];
        let texts: Vec<String> = (0..500)
            .map(|i| {
                (0..(i % 6 + 1))
                    .map(|j| words[(i * 7 + j * 3) % words.len()])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let batch = m.classify_batch(&texts).unwrap();
        assert_eq!(batch.len(), 500);
        for (t, p) in texts.iter().zip(&batch) {
            assert_eq!(&m.classify(t).unwrap(), p);
        }
    }

    #[test]
    fn argmax_ties_break_lexicographically() {
        let probs: BTreeMap<String, f64> =
            [("b".to_string(), 0.4), ("a".to_string(), 0.4), ("c".to_string(), 0.2)]
                .into_iter()
                .collect();
        assert_eq!(Prediction::from_probabilities(probs).label, "a");
    }

    #[test]
    fn config_errors() {
        assert!(LexiconClassifier::new("x", vec![], 1.0).is_err());
        assert!(LexiconClassifier::new("x", three_labels(), 0.0).is_err());
        assert!(stub().with_weight("x", "bogus", 1.0).is_err());
        assert!(stub().with_weights("x", &[1.0]).is_err());
    }

    #[test]
    fn region_detector_reads_mean() {
        let mut img = Array2::<f64>::zeros((4, 4));
        img[[1, 1]] = 1.0;
        let det = RegionBrightnessDetector { top: 1, left: 1, height: 2, width: 2 };
        assert!((det.confidence(&img) - 0.25).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const VOCAB: &[&str] = &[
            "strong", "growth", "loss", "weak", "meeting", "the", "pipeline", "record",
        ];

        proptest! {
            #[test]
            fn permutation_invariant(idx in proptest::collection::vec(0usize..VOCAB.len(), 0..10), seed in any::<u64>()) {
                let m = LexiconClassifier::financial();
                let words: Vec<&str> = idx.iter().map(|&i| VOCAB[i]).collect();
                let mut shuffled = words.clone();
                // deterministic shuffle driven by seed
                let n = shuffled.len();
                if n > 1 {
                    let mut s = seed;
                    for i in (1..n).rev() {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        shuffled.swap(i, (s >> 33) as usize % (i + 1));
                    }
                }
                let a = m.classify(&words.join(" ")).unwrap();
                let b = m.classify(&shuffled.join(" ")).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn zero_weight_token_is_inert(idx in proptest::collection::vec(0usize..VOCAB.len(), 0..8)) {
                let m = LexiconClassifier::financial();
                let base: Vec<&str> = idx.iter().map(|&i| VOCAB[i]).collect();
                let a = m.classify(&base.join(" ")).unwrap();
                let b = m.classify(&format!("{} zzunknown", base.join(" "))).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn probabilities_normalized(idx in proptest::collection::vec(0usize..VOCAB.len(), 0..12)) {
                let m = LexiconClassifier::financial();
                let text: Vec<&str> = idx.iter().map(|&i| VOCAB[i]).collect();
                let p = m.classify(&text.join(" ")).unwrap();
                let total: f64 = p.probabilities.values().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                let best = p.probabilities.values().copied().fold(f64::MIN, f64::max);
                prop_assert_eq!(p.prob(&p.label), best);
            }
        }
    }
}
