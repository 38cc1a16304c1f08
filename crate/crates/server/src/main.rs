use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use ehr_core::audit::FileAuditStore;
use ehr_core::clock::SystemClock;
use ehr_core::load::{check_thresholds, write_ndjson, LoadError, StagePlan, ThresholdSpec};
use ehr_core::platform::{Backends, Platform};
use ehr_metrics::{evaluate_corpus, io, HashedTrigramEmbedder, MetricKind};
use ehr_server::generator::HttpGenerator;
use ehr_server::loadtest::{run_scenario, Scenario};
use ehr_server::ServerConfig;

#[derive(Parser)]
#[command(name = "ehr", version, about = "Desk-scale EHR platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway and all services in one process.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Seed an admin, a hospital and N admitted doctor/patient pairs.
        #[arg(long, value_name = "N")]
        seed_demo: Option<usize>,
        #[arg(long, default_value = "demo-password")]
        demo_password: String,
        /// Write one doctor token per line here after seeding.
        #[arg(long, requires = "seed_demo")]
        token_file: Option<PathBuf>,
    },
    /// Score generated summaries against references.
    Evaluate {
        /// NDJSON with `reference` and `generated` fields.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "rouge1,rouge2,rougeL,semantic")]
        metrics: String,
        /// Stats JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-pair TSV table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Staged virtual-user load test against a running deployment.
    Loadtest {
        #[arg(long, default_value = "1m:50,2m:50,1m:0")]
        stages: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long, default_value = "/api/user/profile")]
        endpoint: String,
        /// File with one bearer token per line.
        #[arg(long)]
        token: PathBuf,
        /// Think time between iterations, seconds.
        #[arg(long, default_value_t = 1.0)]
        think: f64,
        #[arg(long, default_value_t = 500.0)]
        p95: f64,
        #[arg(long, default_value_t = 0.01)]
        max_fail: f64,
        /// Per-request samples as NDJSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Send a distinct X-Forwarded-For address per virtual user.
        #[arg(long)]
        forwarded_ips: bool,
    },
}

fn serve(
    config: Option<PathBuf>,
    bind: Option<SocketAddr>,
    seed: Option<usize>,
    password: String,
    token_file: Option<PathBuf>,
) -> Result<(), String> {
    let mut cfg = match &config {
        Some(p) => ServerConfig::load(p)?,
        None => ServerConfig::default(),
    };
    if let Some(b) = bind {
        cfg.bind = b;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let mut backends = Backends::default();
    if let Some(g) = &cfg.generator {
        backends.generator = Arc::new(HttpGenerator::new(g, runtime.handle().clone()).map_err(|e| e.to_string())?);
    }
    if let Some(path) = &cfg.audit_log_path {
        backends.audit_store = Box::new(FileAuditStore::open(path).map_err(|e| e.to_string())?);
    }
    let platform =
        Arc::new(Platform::new(cfg.platform_options(), Arc::new(SystemClock), backends).map_err(|e| e.to_string())?);
    if let Some(n) = seed {
        let demo = platform.seed_demo(n, &password).map_err(|e| e.to_string())?;
        tracing::info!(admin = %demo.admin, doctors = n, "seeded demo population");
        if let Some(path) = token_file {
            let mut f = BufWriter::new(File::create(&path).map_err(|e| e.to_string())?);
            for d in &demo.doctors {
                let (token, _) = platform.login(d.as_str(), &password).map_err(|e| e.to_string())?;
                writeln!(f, "{token}").map_err(|e| e.to_string())?;
            }
            f.flush().map_err(|e| e.to_string())?;
        }
    }
    let deployment = ehr_server::build(platform, &cfg);
    runtime.block_on(async move {
        let (addr, server) = ehr_server::spawn(deployment.router, cfg.bind)
            .await
            .map_err(|e| format!("bind {}: {e}", cfg.bind))?;
        tracing::info!("listening on http://{addr}");
        tokio::select! {
            _ = server => {}
            _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        }
        Ok(())
    })
}

fn evaluate(pairs: PathBuf, metrics: String, out: Option<PathBuf>, table: Option<PathBuf>) -> Result<(), String> {
    let metrics = MetricKind::parse_list(&metrics).map_err(|e| e.to_string())?;
    let f = File::open(&pairs).map_err(|e| format!("{}: {e}", pairs.display()))?;
    let pairs = io::read_pairs(BufReader::new(f)).map_err(|e| e.to_string())?;
    let stats = evaluate_corpus(&pairs, &metrics, &HashedTrigramEmbedder).map_err(|e| e.to_string())?;
    match out {
        Some(p) => io::write_stats(File::create(&p).map_err(|e| e.to_string())?, &stats),
        None => io::write_stats(std::io::stdout().lock(), &stats),
    }
    .map_err(|e| e.to_string())?;
    if let Some(p) = table {
        io::write_pair_table(File::create(&p).map_err(|e| e.to_string())?, &stats, &metrics)
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn loadtest(
    stages: String,
    url: String,
    endpoint: String,
    token: PathBuf,
    think: f64,
    p95: f64,
    max_fail: f64,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    forwarded_ips: bool,
) -> Result<bool, LoadError> {
    let plan: StagePlan = stages.parse()?;
    let limits = ThresholdSpec::new(p95, max_fail)?;
    if !(think.is_finite() && think >= 0.0) {
        return Err(LoadError::UndefinedInput(format!("think time {think}")));
    }
    let tokens: Vec<String> = std::fs::read_to_string(&token)
        .map_err(|e| LoadError::UndefinedInput(format!("{}: {e}", token.display())))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    let mut scenario = Scenario::new(url, plan, tokens);
    scenario.endpoint = endpoint;
    scenario.think_time = Duration::from_secs_f64(think);
    scenario.forwarded_ips = forwarded_ips;

    let runtime = tokio::runtime::Runtime::new().map_err(|e| LoadError::Setup(e.to_string()))?;
    let outcome = runtime.block_on(run_scenario(&scenario))?;
    let verdict = check_thresholds(&outcome.report, &limits)?;
    let io_err = |e: std::io::Error| LoadError::Setup(e.to_string());
    if let Some(p) = out {
        write_ndjson(&outcome.samples, BufWriter::new(File::create(p).map_err(io_err)?)).map_err(io_err)?;
    }
    if let Some(p) = report {
        let doc = serde_json::json!({ "report": outcome.report, "violations": verdict.violations });
        std::fs::write(p, serde_json::to_vec_pretty(&doc).expect("report serializes")).map_err(io_err)?;
    }
    let r = &outcome.report;
    println!(
        "requests={} failures={} failure_rate={:.4} p50={:.1}ms p95={:.1}ms p99={:.1}ms rps={:.1}",
        r.requests, r.failures, r.failure_rate, r.p50_ms, r.p95_ms, r.p99_ms, r.throughput_rps
    );
    for v in &verdict.violations {
        println!("threshold violated: {v:?}");
    }
    Ok(verdict.passed())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve {
            config,
            bind,
            seed_demo,
            demo_password,
            token_file,
        } => match serve(config, bind, seed_demo, demo_password, token_file) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Evaluate {
            pairs,
            metrics,
            out,
            table,
        } => match evaluate(pairs, metrics, out, table) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Loadtest {
            stages,
            url,
            endpoint,
            token,
            think,
            p95,
            max_fail,
            out,
            report,
            forwarded_ips,
        } => match loadtest(
            stages,
            url,
            endpoint,
            token,
            think,
            p95,
            max_fail,
            out,
            report,
            forwarded_ips,
        ) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
