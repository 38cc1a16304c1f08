//! Load-test plans, samples and the statistics computed from them.
//! The HTTP runner itself lives in the server crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoadError {
    #[error("missing or invalid input: {0}")]
    UndefinedInput(String),
    #[error("setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub duration_secs: u64,
    pub target: u32,
}

/// Ramp schedule. Each stage moves the virtual-user count linearly from
/// where the previous stage ended (zero at start) to its target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

fn parse_duration(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mult) = if let Some(n) = s.strip_suffix('m') {
        (n, 60)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1)
    } else {
        (s, 1)
    };
    num.trim().parse::<u64>().ok().map(|n| n * mult)
}

impl FromStr for StagePlan {
    type Err = LoadError;

    /// Parses `duration:target` pairs separated by commas, e.g.
    /// `1m:50,2m:50,1m:0`. Durations take an optional `s` or `m` suffix.
    fn from_str(s: &str) -> Result<Self, LoadError> {
        let bad = |part: &str| LoadError::UndefinedInput(format!("stage {part:?}; expected duration:target"));
        let mut stages = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (d, t) = part.split_once(':').ok_or_else(|| bad(part))?;
            let duration_secs = parse_duration(d).filter(|&d| d > 0).ok_or_else(|| bad(part))?;
            let target = t.trim().parse().map_err(|_| bad(part))?;
            stages.push(Stage { duration_secs, target });
        }
        StagePlan::new(stages)
    }
}

impl fmt::Display for StagePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .stages
            .iter()
            .map(|s| format!("{}s:{}", s.duration_secs, s.target))
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl StagePlan {
    pub fn new(stages: Vec<Stage>) -> Result<Self, LoadError> {
        if stages.is_empty() {
            return Err(LoadError::UndefinedInput("stage plan is empty".into()));
        }
        if stages.iter().any(|s| s.duration_secs == 0) {
            return Err(LoadError::UndefinedInput("stage durations must be positive".into()));
        }
        Ok(Self { stages })
    }

    /// Ramp up to 50 users over a minute, hold for two, ramp down over one.
    pub fn standard() -> Self {
        Self {
            stages: vec![
                Stage {
                    duration_secs: 60,
                    target: 50,
                },
                Stage {
                    duration_secs: 120,
                    target: 50,
                },
                Stage {
                    duration_secs: 60,
                    target: 0,
                },
            ],
        }
    }

    pub fn total_secs(&self) -> u64 {
        self.stages.iter().map(|s| s.duration_secs).sum()
    }

    pub fn peak(&self) -> u32 {
        self.stages.iter().map(|s| s.target).max().unwrap_or(0)
    }

    /// Fractional target at `t` seconds; zero outside the plan.
    pub fn target_at(&self, t: f64) -> f64 {
        if t.is_nan() || t < 0.0 {
            return 0.0;
        }
        let mut start = 0.0;
        let mut from = 0.0;
        for s in &self.stages {
            let d = s.duration_secs as f64;
            let to = f64::from(s.target);
            if t < start + d {
                return from + (to - from) * (t - start) / d;
            }
            start += d;
            from = to;
        }
        if t == start {
            from
        } else {
            0.0
        }
    }

    /// Number of users that should be running at `t`: user `i` (1-based)
    /// runs while `i <= round(target_at(t))`.
    pub fn active_at(&self, t: f64) -> u32 {
        self.target_at(t).round().max(0.0) as u32
    }
}

/// One completed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub vu: u32,
    /// Milliseconds since the run started.
    pub start_ms: f64,
    pub duration_ms: f64,
    /// HTTP status, or 0 when no response arrived.
    pub status: u16,
    pub endpoint: String,
}

impl Sample {
    /// Anything but a 200 counts, including transport errors.
    pub fn failed(&self) -> bool {
        self.status != 200
    }
}

/// Nearest-rank percentile: the smallest value with at least `q * n`
/// values at or below it. `sorted` must be ascending.
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64, LoadError> {
    if sorted.is_empty() {
        return Err(LoadError::UndefinedInput("percentile of no samples".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(LoadError::UndefinedInput(format!(
            "percentile fraction {q} outside (0, 1]"
        )));
    }
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStats {
    pub second: u64,
    pub requests: u64,
    pub failures: u64,
    /// Distinct virtual users that started a request in this second.
    pub active_vus: u32,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub requests: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub elapsed_secs: f64,
    pub throughput_rps: f64,
    pub peak_vus: u32,
    pub per_second: Vec<SecondStats>,
}

impl LoadReport {
    pub fn from_samples(samples: &[Sample], elapsed_secs: f64) -> Self {
        let mut d: Vec<f64> = samples.iter().map(|s| s.duration_ms).collect();
        d.sort_by(f64::total_cmp);
        let requests = samples.len() as u64;
        let failures = samples.iter().filter(|s| s.failed()).count() as u64;
        let pct = |q| percentile(&d, q).unwrap_or(0.0);

        let mut by_second: BTreeMap<u64, (u64, BTreeSet<u32>, Vec<f64>)> = BTreeMap::new();
        for s in samples {
            let sec = (s.start_ms / 1000.0).max(0.0) as u64;
            let e = by_second.entry(sec).or_default();
            e.0 += u64::from(s.failed());
            e.1.insert(s.vu);
            e.2.push(s.duration_ms);
        }

        Self {
            requests,
            failures,
            failure_rate: if requests == 0 {
                0.0
            } else {
                failures as f64 / requests as f64
            },
            mean_ms: if d.is_empty() {
                0.0
            } else {
                d.iter().sum::<f64>() / d.len() as f64
            },
            p50_ms: pct(0.50),
            p95_ms: pct(0.95),
            p99_ms: pct(0.99),
            max_ms: d.last().copied().unwrap_or(0.0),
            elapsed_secs,
            throughput_rps: if elapsed_secs > 0.0 {
                requests as f64 / elapsed_secs
            } else {
                0.0
            },
            peak_vus: samples.iter().map(|s| s.vu).max().unwrap_or(0),
            per_second: by_second
                .into_iter()
                .map(|(second, (failures, vus, mut ds))| {
                    ds.sort_by(f64::total_cmp);
                    SecondStats {
                        second,
                        requests: ds.len() as u64,
                        failures,
                        active_vus: vus.len() as u32,
                        p95_ms: percentile(&ds, 0.95).unwrap_or(0.0),
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    /// p95 latency must stay strictly below this.
    pub p95_ms: f64,
    /// Failure rate must stay strictly below this.
    pub max_failure_rate: f64,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self {
            p95_ms: 500.0,
            max_failure_rate: 0.01,
        }
    }
}

impl ThresholdSpec {
    pub fn new(p95_ms: f64, max_failure_rate: f64) -> Result<Self, LoadError> {
        if p95_ms.is_nan() || p95_ms <= 0.0 {
            return Err(LoadError::UndefinedInput("p95 threshold must be positive".into()));
        }
        if !(0.0..=1.0).contains(&max_failure_rate) {
            return Err(LoadError::UndefinedInput(
                "failure-rate threshold must be within [0, 1]".into(),
            ));
        }
        Ok(Self {
            p95_ms,
            max_failure_rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    P95,
    FailureRate,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::P95 => "p95",
            Violation::FailureRate => "failure rate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdVerdict {
    pub violations: Vec<Violation>,
}

impl ThresholdVerdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fails a threshold when the measured value reaches it.
pub fn check_thresholds(report: &LoadReport, limits: &ThresholdSpec) -> Result<ThresholdVerdict, LoadError> {
    if report.requests == 0 {
        return Err(LoadError::UndefinedInput("report has no samples".into()));
    }
    let mut violations = Vec::new();
    if report.p95_ms >= limits.p95_ms {
        violations.push(Violation::P95);
    }
    if report.failure_rate >= limits.max_failure_rate {
        violations.push(Violation::FailureRate);
    }
    Ok(ThresholdVerdict { violations })
}

pub fn write_ndjson<W: Write>(samples: &[Sample], mut out: W) -> io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
