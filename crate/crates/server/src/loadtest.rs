//! Staged virtual-user load runner over HTTP.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ehr_core::load::{LoadError, LoadReport, Sample, StagePlan};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

const TICK: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct Scenario {
    /// e.g. `http://127.0.0.1:8080`
    pub base_url: String,
    pub endpoint: String,
    pub plan: StagePlan,
    /// Bearer tokens handed to virtual users round-robin.
    pub tokens: Vec<String>,
    /// Give each virtual user its own `X-Forwarded-For` address.
    pub forwarded_ips: bool,
    pub think_time: Duration,
    pub request_timeout: Duration,
}

impl Scenario {
    pub fn new(base_url: impl Into<String>, plan: StagePlan, tokens: Vec<String>) -> Self {
        Self {
            base_url: base_url.into(),
            endpoint: "/api/user/profile".into(),
            plan,
            tokens,
            forwarded_ips: false,
            think_time: Duration::from_secs(1),
            request_timeout: Duration::from_secs(10),
        }
    }
}

/// Scheduler state sampled every tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VuPoint {
    pub t_secs: f64,
    pub target: f64,
    pub scheduled: u32,
    /// Virtual users inside an iteration (request or think time).
    pub running: u32,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub samples: Vec<Sample>,
    /// Completed iterations per virtual user.
    pub iterations: Vec<u64>,
    pub series: Vec<VuPoint>,
    pub report: LoadReport,
}

pub fn vu_address(vu: u32) -> String {
    format!("10.77.{}.{}", vu / 250, vu % 250 + 1)
}

async fn until_descheduled(rx: &mut watch::Receiver<u32>, vu: u32) {
    loop {
        if *rx.borrow_and_update() <= vu {
            return;
        }
        if rx.changed().await.is_err() {
            return;
        }
    }
}

struct Vu {
    id: u32,
    client: reqwest::Client,
    url: String,
    endpoint: String,
    token: String,
    forwarded: Option<String>,
    think: Duration,
    started: Instant,
    running: Arc<AtomicBool>,
}

impl Vu {
    async fn request(&self) -> Sample {
        let start = Instant::now();
        let mut req = self.client.get(&self.url).bearer_auth(&self.token);
        if let Some(ip) = &self.forwarded {
            req = req.header("x-forwarded-for", ip);
        }
        let status = match req.send().await {
            Ok(resp) => {
                let status = resp.status().as_u16();
                // drain so the connection returns to the pool
                match resp.bytes().await {
                    Ok(_) => status,
                    Err(_) => 0,
                }
            }
            Err(_) => 0,
        };
        Sample {
            vu: self.id,
            start_ms: start.duration_since(self.started).as_secs_f64() * 1000.0,
            duration_ms: start.elapsed().as_secs_f64() * 1000.0,
            status,
            endpoint: self.endpoint.clone(),
        }
    }

    async fn run(self, mut rx: watch::Receiver<u32>) -> (Vec<Sample>, u64) {
        let mut samples = Vec::new();
        let mut iterations = 0;
        loop {
            let desired = *rx.borrow_and_update();
            if self.id >= desired {
                self.running.store(false, Ordering::SeqCst);
                if rx.changed().await.is_err() {
                    break;
                }
                continue;
            }
            self.running.store(true, Ordering::SeqCst);
            samples.push(self.request().await);
            iterations += 1;
            tokio::select! {
                _ = tokio::time::sleep(self.think) => {}
                _ = until_descheduled(&mut rx, self.id) => {}
            }
        }
        self.running.store(false, Ordering::SeqCst);
        (samples, iterations)
    }
}

/// Runs the plan against `scenario.base_url`. The target must answer
/// `GET /health` before any virtual user starts.
pub async fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, LoadError> {
    if scenario.tokens.is_empty() {
        return Err(LoadError::UndefinedInput("no bearer tokens supplied".into()));
    }
    let client = reqwest::Client::builder()
        .timeout(scenario.request_timeout)
        .build()
        .map_err(|e| LoadError::Setup(e.to_string()))?;
    let base = scenario.base_url.trim_end_matches('/');
    let health = client
        .get(format!("{base}/health"))
        .send()
        .await
        .map_err(|e| LoadError::Setup(format!("{base} unreachable: {e}")))?;
    if !health.status().is_success() {
        return Err(LoadError::Setup(format!("{base}/health returned {}", health.status())));
    }

    let plan = &scenario.plan;
    let (tx, rx) = watch::channel(0u32);
    let started = Instant::now();
    let flags: Vec<Arc<AtomicBool>> = (0..plan.peak()).map(|_| Arc::default()).collect();
    let tasks: Vec<_> = (0..plan.peak())
        .map(|id| {
            let vu = Vu {
                id,
                client: client.clone(),
                url: format!("{base}{}", scenario.endpoint),
                endpoint: scenario.endpoint.clone(),
                token: scenario.tokens[id as usize % scenario.tokens.len()].clone(),
                forwarded: scenario.forwarded_ips.then(|| vu_address(id)),
                think: scenario.think_time,
                started,
                running: flags[id as usize].clone(),
            };
            tokio::spawn(vu.run(rx.clone()))
        })
        .collect();
    drop(rx);

    let total = plan.total_secs() as f64;
    let mut series = Vec::new();
    let mut ticker = tokio::time::interval(TICK);
    loop {
        ticker.tick().await;
        let t = started.elapsed().as_secs_f64();
        if t >= total {
            break;
        }
        let scheduled = plan.active_at(t);
        tx.send_replace(scheduled);
        series.push(VuPoint {
            t_secs: t,
            target: plan.target_at(t),
            scheduled,
            running: flags.iter().filter(|f| f.load(Ordering::SeqCst)).count() as u32,
        });
    }
    tx.send_replace(0);
    drop(tx);

    let mut samples = Vec::new();
    let mut iterations = Vec::with_capacity(tasks.len());
    for t in tasks {
        let (s, n) = t
            .await
            .map_err(|e| LoadError::Setup(format!("virtual user panicked: {e}")))?;
        samples.extend(s);
        iterations.push(n);
    }
    samples.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
    let elapsed = started.elapsed().as_secs_f64();
    let report = LoadReport::from_samples(&samples, elapsed);
    Ok(RunOutcome {
        samples,
        iterations,
        series,
        report,
    })
}
