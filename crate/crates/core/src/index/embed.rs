//! Text embedders.
//!
//! [`HashingEmbedder`] is the offline default: signed feature hashing of the
//! bag of normalized tokens, L2-normalized. [`RemoteEmbedder`] calls an
//! OpenAI-compatible `/embeddings` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalized_tokens;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding service unavailable: {0}")]
    Unavailable(String),
    #[error("malformed embedding response: {0}")]
    BadResponse(String),
}

/// Fixed-dimension vector, unit length or all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    /// Scale to unit length; the zero vector is left as is.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let na = self.norm();
        let nb = other.norm();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    fn identifier(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Seeded 64-bit FNV-1a followed by a splitmix64 finalizer.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION, DEFAULT_HASH_SEED)
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let mut values = vec![0.0; self.dimension];
        for tok in normalized_tokens(text) {
            let h = token_hash(&tok, self.seed);
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
        Embedding::normalized(values)
    }
}

impl Embedder for HashingEmbedder {
    fn identifier(&self) -> &str {
        "feature-hashing"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(self.embed_text(text))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Hosted embedding client for OpenAI-compatible servers.
pub struct RemoteEmbedder {
    url: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dimension: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self { url: url.into(), api_key, model: model.into(), dimension, agent }
    }
}

impl Embedder for RemoteEmbedder {
    fn identifier(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if normalized_tokens(text).is_empty() {
            return Ok(Embedding::zeros(self.dimension));
        }
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbeddingRequest { model: &self.model, input: text })
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        let body: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        let values = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::BadResponse("no embedding returned".into()))?
            .embedding;
        if values.len() != self.dimension {
            return Err(EmbedError::BadResponse(format!(
                "expected dimension {}, got {}",
                self.dimension,
                values.len()
            )));
        }
        Ok(Embedding::normalized(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashingEmbedder::default().embed_text("");
        assert_eq!(e.dim(), DEFAULT_DIMENSION);
        assert!(e.is_zero());
        assert!(HashingEmbedder::default().embed_text(" .. ").is_zero());
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let emb = HashingEmbedder::default();
        let a = emb.embed_text("occlusion positive growth");
        let b = emb.embed_text("occlusion positive growth");
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn order_and_case_invariant() {
        let emb = HashingEmbedder::default();
        let a = emb.embed_text("occlusion positive growth");
        let b = emb.embed_text("Growth, positive OCCLUSION!");
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hash_is_stable() {
        let h = token_hash("growth", DEFAULT_HASH_SEED);
        assert_eq!(h, 0xedfe_af96_ff04_c0cb);
        assert_ne!(token_hash("growth", 1), h);
        assert_ne!(token_hash("growths", DEFAULT_HASH_SEED), h);
        let e = HashingEmbedder::default().embed_text("growth");
        assert_eq!(e.values[203], -1.0);
    }

    #[test]
    fn cosine_of_zero_is_zero() {
        let z = Embedding::zeros(4);
        let e = Embedding::normalized(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(z.cosine(&e), 0.0);
        assert_eq!(e.cosine(&e), 1.0);
    }
}
