//! Lexical and semantic overlap scores for evaluating generated clinical
//! summaries against reference histories.
//!
//! The crate provides:
//!
//! - [`tokenize`]: lowercase, Unicode-aware word splitting.
//! - [`rouge_n`], [`rouge_l`] and [`lcs_length`]: n-gram and longest common
//!   subsequence overlap with clipped (multiset) match counts.
//! - [`semantic_score`]: greedy max-cosine token matching over a pluggable
//!   [`EmbeddingProvider`], with a deterministic [`HashedTrigramEmbedder`].
//! - [`evaluate_corpus`]: per-pair scores plus box-plot statistics.

mod corpus;
mod embed;
mod error;
pub mod io;
mod rouge;
mod semantic;
mod stats;
mod tokenize;

pub use corpus::{evaluate_corpus, CorpusStats, MetricKind, MetricStats, PairError, PairScores, SummaryPair};
pub use embed::{EmbeddingProvider, HashedTrigramEmbedder, TRIGRAM_DIMENSION};
pub use error::MetricsError;
pub use rouge::{lcs_length, rouge_l, rouge_n};
pub use semantic::{cosine_similarity, semantic_score};
pub use stats::BoxStats;
pub use tokenize::{tokenize, TokenSequence};

use serde::{Deserialize, Serialize};

/// Recall, precision and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl ScoreTriple {
    /// Builds a triple from recall and precision. F1 is 0 when both are 0.
    pub fn from_recall_precision(recall: f64, precision: f64) -> Self {
        let denom = precision + recall;
        let f1 = if denom > 0.0 {
            2.0 * precision * recall / denom
        } else {
            0.0
        };
        Self { recall, precision, f1 }
    }

    pub const PERFECT: ScoreTriple = ScoreTriple {
        recall: 1.0,
        precision: 1.0,
        f1: 1.0,
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_is_zero_when_nothing_matches() {
        let s = ScoreTriple::from_recall_precision(0.0, 0.0);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        let s = ScoreTriple::from_recall_precision(1.0, 0.75);
        assert!((s.f1 - 6.0 / 7.0).abs() < 1e-12);
    }
}
