use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{rouge_l, rouge_n, semantic_score, tokenize, BoxStats, EmbeddingProvider, MetricsError, ScoreTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rouge2")]
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "semantic")]
    Semantic,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Rouge1,
        MetricKind::Rouge2,
        MetricKind::RougeL,
        MetricKind::Semantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Rouge1 => "rouge1",
            MetricKind::Rouge2 => "rouge2",
            MetricKind::RougeL => "rougeL",
            MetricKind::Semantic => "semantic",
        }
    }

    /// Parses a comma-separated metric list such as `rouge1,rougeL`.
    pub fn parse_list(list: &str) -> Result<Vec<MetricKind>, MetricsError> {
        let mut out = Vec::new();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind: MetricKind = part.parse()?;
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        if out.is_empty() {
            return Err(MetricsError::Input("empty metric list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricsError::Input(format!("unknown metric {s:?}")))
    }
}

/// One reference text and the summary generated for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub reference: String,
    pub generated: String,
}

impl SummaryPair {
    pub fn new(reference: impl Into<String>, generated: impl Into<String>) -> Self {
        Self {
            id: None,
            reference: reference.into(),
            generated: generated.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub scores: BTreeMap<MetricKind, ScoreTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub recall: BoxStats,
    pub precision: BoxStats,
    pub f1: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pair_count: usize,
    pub evaluated: usize,
    pub excluded: Vec<PairError>,
    pub metrics: BTreeMap<MetricKind, MetricStats>,
    pub per_pair: Vec<PairScores>,
}

fn score_pair(
    pair: &SummaryPair,
    metrics: &[MetricKind],
    provider: &(dyn EmbeddingProvider + Sync),
) -> Result<BTreeMap<MetricKind, ScoreTriple>, MetricsError> {
    let reference = tokenize(&pair.reference);
    let generated = tokenize(&pair.generated);
    if reference.is_empty() {
        return Err(MetricsError::UndefinedInput("empty reference".into()));
    }
    metrics
        .iter()
        .map(|&kind| {
            let score = match kind {
                MetricKind::Rouge1 => rouge_n(&reference, &generated, 1),
                MetricKind::Rouge2 => rouge_n(&reference, &generated, 2),
                MetricKind::RougeL => rouge_l(&reference, &generated),
                MetricKind::Semantic => semantic_score(&reference, &generated, provider),
            }?;
            Ok((kind, score))
        })
        .collect()
}

/// Scores every pair and summarizes each metric component as box-plot stats.
///
/// Pairs whose scores are undefined (e.g. an empty reference) are listed in
/// [`CorpusStats::excluded`] and left out of the statistics. Output order
/// follows input order regardless of parallel evaluation.
pub fn evaluate_corpus(
    pairs: &[SummaryPair],
    metrics: &[MetricKind],
    provider: &(dyn EmbeddingProvider + Sync),
) -> Result<CorpusStats, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::UndefinedInput("empty corpus".into()));
    }
    if metrics.is_empty() {
        return Err(MetricsError::Input("no metrics selected".into()));
    }

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        pairs.par_iter().map(|p| score_pair(p, metrics, provider)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = pairs.iter().map(|p| score_pair(p, metrics, provider)).collect();

    let mut per_pair = Vec::new();
    let mut excluded = Vec::new();
    for (index, (pair, result)) in pairs.iter().zip(results).enumerate() {
        match result {
            Ok(scores) => per_pair.push(PairScores {
                index,
                id: pair.id.clone(),
                scores,
            }),
            Err(e) => excluded.push(PairError {
                index,
                id: pair.id.clone(),
                error: e.to_string(),
            }),
        }
    }

    let mut stats = BTreeMap::new();
    for &kind in metrics {
        let column =
            |f: fn(&ScoreTriple) -> f64| -> Vec<f64> { per_pair.iter().map(|p| f(&p.scores[&kind])).collect() };
        let (Some(recall), Some(precision), Some(f1)) = (
            BoxStats::from_values(&column(|s| s.recall)),
            BoxStats::from_values(&column(|s| s.precision)),
            BoxStats::from_values(&column(|s| s.f1)),
        ) else {
            continue;
        };
        stats.insert(kind, MetricStats { recall, precision, f1 });
    }

    Ok(CorpusStats {
        pair_count: pairs.len(),
        evaluated: per_pair.len(),
        excluded,
        metrics: stats,
        per_pair,
    })
}
