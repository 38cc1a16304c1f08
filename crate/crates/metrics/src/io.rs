//! Newline-delimited pair input and stats/table output for the `evaluate`
//! command.

use std::io::{BufRead, Write};

use crate::{CorpusStats, MetricKind, MetricsError, SummaryPair};

/// Reads one `{"reference": ..., "generated": ...}` object per line.
/// Blank lines are skipped.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<SummaryPair>, MetricsError> {
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Input(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: SummaryPair =
            serde_json::from_str(&line).map_err(|e| MetricsError::Input(format!("line {}: {e}", lineno + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Writes the stats document (without the per-pair list) as pretty JSON.
pub fn write_stats<W: Write>(mut out: W, stats: &CorpusStats) -> Result<(), MetricsError> {
    let doc = serde_json::json!({
        "pair_count": stats.pair_count,
        "evaluated": stats.evaluated,
        "excluded": stats.excluded,
        "metrics": stats.metrics,
    });
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| MetricsError::Input(e.to_string()))?;
    writeln!(out).map_err(|e| MetricsError::Input(e.to_string()))
}

/// Writes a tab-separated table with one row per scored pair and
/// `<metric>_{recall,precision,f1}` columns.
pub fn write_pair_table<W: Write>(mut out: W, stats: &CorpusStats, metrics: &[MetricKind]) -> std::io::Result<()> {
    let mut header = vec!["index".to_string(), "id".to_string()];
    for m in metrics {
        for part in ["recall", "precision", "f1"] {
            header.push(format!("{m}_{part}"));
        }
    }
    writeln!(out, "{}", header.join("\t"))?;
    for row in &stats.per_pair {
        let mut cells = vec![row.index.to_string(), row.id.clone().unwrap_or_default()];
        for m in metrics {
            let s = row.scores[m];
            cells.extend([s.recall, s.precision, s.f1].map(|v| format!("{v:.6}")));
        }
        writeln!(out, "{}", cells.join("\t"))?;
    }
    Ok(())
}
