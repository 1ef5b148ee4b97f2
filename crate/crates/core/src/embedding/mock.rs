use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{norm, EmbedKind, EmbeddingProvider};
use crate::provider::ProviderError;
use crate::text::tokenize;

/// Deterministic offline embedder.
///
/// Each token maps to a pseudo-random unit vector seeded by a hash of
/// `(seed, token)`; a text is the L2-normalized sum of its token vectors.
/// Texts sharing tokens therefore land close together. A text without any
/// alphanumeric token is embedded as if it were a single token.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
    tag: String,
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let dim = dim.max(1);
        HashEmbedder { seed, dim, tag: format!("mock-hash-{dim}") }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }

    pub fn text_vector(&self, text: &str) -> Vec<f64> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.to_string());
        }
        let mut sum = vec![0.0; self.dim];
        for t in &tokens {
            for (s, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += x;
            }
        }
        normalize(&mut sum);
        sum
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_batch(&self, texts: &[String], kind: EmbedKind) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| match kind {
                EmbedKind::Token => self.token_vector(&t.to_lowercase()),
                EmbedKind::Document | EmbedKind::Query => self.text_vector(t),
            })
            .collect())
    }
}
