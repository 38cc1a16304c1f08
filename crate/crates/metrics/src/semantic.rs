use crate::{EmbeddingProvider, MetricsError, ScoreTriple, TokenSequence};

/// Cosine similarity of two equal-length vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ProviderContract(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ProviderContract("zero-magnitude vector".into()));
    }
    Ok(dot / (na * nb))
}

fn embed_checked(provider: &dyn EmbeddingProvider, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>, MetricsError> {
    let vectors = provider.embed(tokens)?;
    if vectors.len() != tokens.len() {
        return Err(MetricsError::ProviderContract(format!(
            "{} vectors for {} tokens",
            vectors.len(),
            tokens.len()
        )));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != provider.dimension()) {
        return Err(MetricsError::ProviderContract(format!(
            "vector of dimension {}, provider declares {}",
            v.len(),
            provider.dimension()
        )));
    }
    Ok(vectors)
}

/// Greedy max-cosine matching between token embeddings.
///
/// Recall averages, over reference tokens, the best similarity to any
/// generated token; precision does the same from the generated side.
/// Similarities are clamped to `[0, 1]`, so anti-correlated tokens count as
/// unmatched.
pub fn semantic_score(
    reference: &TokenSequence,
    generated: &TokenSequence,
    provider: &dyn EmbeddingProvider,
) -> Result<ScoreTriple, MetricsError> {
    if reference.is_empty() || generated.is_empty() {
        return Err(MetricsError::UndefinedInput(
            "semantic score needs nonempty reference and generated texts".into(),
        ));
    }
    let ref_vecs = embed_checked(provider, reference)?;
    let gen_vecs = embed_checked(provider, generated)?;

    // sim[i][j]: reference token i against generated token j
    let mut sim = vec![vec![0.0; gen_vecs.len()]; ref_vecs.len()];
    for (i, r) in ref_vecs.iter().enumerate() {
        for (j, g) in gen_vecs.iter().enumerate() {
            sim[i][j] = cosine_similarity(r, g)?.clamp(0.0, 1.0);
        }
    }

    let recall = sim
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / ref_vecs.len() as f64;
    let precision = (0..gen_vecs.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / gen_vecs.len() as f64;
    Ok(ScoreTriple::from_recall_precision(recall, precision))
}
