//! Deterministic token-hash text embeddings.
//!
//! The toolkit ingests precomputed frame features but still needs query
//! vectors for fully offline runs. Each token hashes to a seeded unit
//! gaussian direction, so the same text always embeds to the same matrix on
//! any platform. Sidecar embedding files, when present, take precedence over
//! this fallback.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::{norm, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextEmbedError {
    #[error("text has no embeddable tokens: '{0}'")]
    NoTokens(String),
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
}

fn normalize_token(token: &str) -> String {
    token
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect()
}

/// Unit-norm direction derived from the token's SHA-256 digest.
pub fn token_vector<T: Real>(token: &str, dim: usize) -> Result<Vec<T>, TextEmbedError> {
    if dim == 0 {
        return Err(TextEmbedError::ZeroDim);
    }
    let digest = Sha256::digest(token.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let len = norm(&raw);
    let inv = if len > 0.0 { 1.0 / len } else { 1.0 };
    Ok(raw.into_iter().map(|v| T::from_f(v * inv)).collect())
}

/// Token-level embedding matrix (one row per token) of the given text.
pub fn embed_text<T: Real>(text: &str, dim: usize) -> Result<Matrix<T>, TextEmbedError> {
    let rows: Vec<Vec<T>> = text
        .split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .map(|t| token_vector(&t, dim))
        .collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(TextEmbedError::NoTokens(text.to_string()));
    }
    Ok(Matrix::from_rows(&rows).expect("token rows share the dimension"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_deterministic_and_unit_norm() {
        let a: Vec<f64> = token_vector("sandwich", 8).unwrap();
        let b: Vec<f64> = token_vector("sandwich", 8).unwrap();
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_tokens_embed_differently() {
        let a: Vec<f64> = token_vector("open", 8).unwrap();
        let b: Vec<f64> = token_vector("close", 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn tokenization_strips_punctuation_and_case() {
        let a: Matrix<f64> = embed_text("Person eats, sandwich!", 4).unwrap();
        let b: Matrix<f64> = embed_text("person eats sandwich", 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), 3);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert_eq!(
            embed_text::<f64>("  ... ", 4).unwrap_err(),
            TextEmbedError::NoTokens("  ... ".into())
        );
    }
}
