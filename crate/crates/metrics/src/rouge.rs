use std::collections::HashMap;

use crate::{MetricsError, ScoreTriple, TokenSequence};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-n for n ∈ {1, 2}.
///
/// Matched n-grams are clipped: an n-gram occurring `a` times in the reference
/// and `b` times in the generated text contributes `min(a, b)` matches.
/// A generated text shorter than `n` has precision 0.
pub fn rouge_n(reference: &TokenSequence, generated: &TokenSequence, n: usize) -> Result<ScoreTriple, MetricsError> {
    if !(1..=2).contains(&n) {
        return Err(MetricsError::UnsupportedOrder(n));
    }
    let ref_tokens = reference.tokens();
    let gen_tokens = generated.tokens();
    if ref_tokens.len() < n {
        return Err(MetricsError::UndefinedInput(format!(
            "reference has {} tokens, ROUGE-{n} needs at least {n}",
            ref_tokens.len()
        )));
    }

    let ref_counts = ngram_counts(ref_tokens, n);
    let gen_counts = ngram_counts(gen_tokens, n);
    let matched: usize = ref_counts
        .iter()
        .map(|(gram, &count)| count.min(gen_counts.get(gram).copied().unwrap_or(0)))
        .sum();

    let ref_total = ref_tokens.len() + 1 - n;
    let gen_total = (gen_tokens.len() + 1).saturating_sub(n);
    let recall = matched as f64 / ref_total as f64;
    let precision = if gen_total == 0 {
        0.0
    } else {
        matched as f64 / gen_total as f64
    };
    Ok(ScoreTriple::from_recall_precision(recall, precision))
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_length(a: &TokenSequence, b: &TokenSequence) -> usize {
    let (long, short) = if a.len() >= b.len() {
        (a.tokens(), b.tokens())
    } else {
        (b.tokens(), a.tokens())
    };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// ROUGE-L: LCS length over the reference length (recall) and over the
/// generated length (precision).
pub fn rouge_l(reference: &TokenSequence, generated: &TokenSequence) -> Result<ScoreTriple, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::UndefinedInput("empty reference".into()));
    }
    let lcs = lcs_length(reference, generated) as f64;
    let recall = lcs / reference.len() as f64;
    let precision = if generated.is_empty() {
        0.0
    } else {
        lcs / generated.len() as f64
    };
    Ok(ScoreTriple::from_recall_precision(recall, precision))
}
