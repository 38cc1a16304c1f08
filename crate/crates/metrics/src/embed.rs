use crate::{MetricsError, TokenSequence};

/// Maps each token of a sequence to a vector. Every vector returned by one
/// provider has the same dimension.
pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;

    /// One vector per token, in token order.
    fn embed(&self, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>, MetricsError>;
}

pub const TRIGRAM_DIMENSION: usize = 64;

/// Deterministic reference embedder: each token is padded with `#`, split
/// into character trigrams, and every trigram increments one of 64 buckets
/// chosen by an FNV-1a hash. Vectors are unit-normalized.
///
/// Components are non-negative, so cosine similarities lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedTrigramEmbedder;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

impl HashedTrigramEmbedder {
    /// Bucket indices hit by the trigrams of `token`, with repetition.
    pub fn buckets(token: &str) -> Vec<usize> {
        let padded: Vec<char> = std::iter::once('#')
            .chain(token.chars())
            .chain(std::iter::once('#'))
            .collect();
        padded
            .windows(3)
            .map(|w| {
                let gram: String = w.iter().collect();
                (fnv1a(gram.as_bytes()) % TRIGRAM_DIMENSION as u64) as usize
            })
            .collect()
    }

    pub fn embed_token(token: &str) -> Vec<f64> {
        let mut v = vec![0.0; TRIGRAM_DIMENSION];
        for b in Self::buckets(token) {
            v[b] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashedTrigramEmbedder {
    fn dimension(&self) -> usize {
        TRIGRAM_DIMENSION
    }

    fn embed(&self, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>, MetricsError> {
        Ok(tokens.into_iter().map(|t| Self::embed_token(t)).collect())
    }
}
