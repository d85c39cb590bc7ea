//! Whitespace tokenization shared by the classifiers, explainers and embedder.

use serde::{Deserialize, Serialize};

/// One word of an input text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Surface form with surrounding punctuation removed, case preserved.
    pub surface: String,
    /// Lowercased lookup key.
    pub normalized: String,
}

/// Split on whitespace and trim leading/trailing non-alphanumeric characters.
///
/// Chunks that are entirely punctuation produce no token.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|chunk| {
            let surface = chunk.trim_matches(|c: char| !c.is_alphanumeric());
            if surface.is_empty() {
                None
            } else {
                Some(Token {
                    surface: surface.to_string(),
                    normalized: surface.to_lowercase(),
                })
            }
        })
        .collect()
}

/// Lowercased lookup keys only.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.normalized).collect()
}

/// Rejoin surfaces with single spaces, skipping positions where `keep` is false.
pub fn join_kept(tokens: &[Token], keep: impl Fn(usize) -> bool) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if keep(i) {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&tok.surface);
        }
    }
    out
}
