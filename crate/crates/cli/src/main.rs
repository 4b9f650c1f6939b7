//! `hit`: run scenarios, replay and score traces, sweep variants, serve live sessions.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use clap::{Args, Parser, Subcommand};
use futures::{SinkExt, StreamExt};
use hit_core::config::{ConfigError, ScenarioConfig};
use hit_core::live::Connection;
use hit_core::metrics::trace_metrics;
use hit_core::par::Execution;
use hit_core::replay::{replay_trace, replay_with, ReplayError};
use hit_core::sim::scenario::{run_scenario, SimError};
use hit_core::supervisor::SystemVariant;
use hit_core::sweep::{run_sweep, SweepSpec};
use hit_core::trace::{read_trace, write_trace, TraceError};
use serde::Serialize;
use serde_json::json;
use tokio::time::MissedTickBehavior;

#[derive(Parser)]
#[command(
    name = "hit",
    version,
    about = "Hierarchical intention tracking: simulation, metrics and live sessions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, print its metrics and optionally write the trace.
    Run(RunArgs),
    /// Re-run the engine over a recorded trace and compare decisions.
    Replay(ReplayArgs),
    /// Compute metrics for recorded traces.
    Eval(EvalArgs),
    /// Run every variant over scripts and seeds and print the comparison table.
    Sweep(SweepArgs),
    /// Serve live sessions over a websocket at /ws.
    Serve(ServeArgs),
    /// Print the default configuration as TOML.
    Config,
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario config (TOML); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Script name; overrides `run.script`.
    #[arg(long)]
    script: Option<String>,
    /// System variant; overrides `run.variant`.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<SystemVariant>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the trace (line-delimited JSON).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Use this config instead of the one stored in the trace header.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Use this variant instead of the one stored in the trace header.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<SystemVariant>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Fail when a trace carries no ground-truth labels.
    #[arg(long)]
    require_labels: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Seeds 0..N.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Comma-separated variants; all when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<SystemVariant>,
    /// Comma-separated script names; the built-in library when omitted.
    #[arg(long, value_delimiter = ',')]
    scripts: Vec<String>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
    /// Write the full report (per-run metrics and tables) as JSON.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// s without client messages before a session is dropped.
    #[arg(long, default_value_t = 10.0)]
    stale_after: f64,
}

fn parse_variant(s: &str) -> Result<SystemVariant, String> {
    SystemVariant::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = SystemVariant::ALL.iter().map(|v| v.name()).collect();
        format!(
            "unknown variant `{s}`; expected one of {}",
            names.join(", ")
        )
    })
}

/// Error printed as one JSON object on stderr.
#[derive(Debug, Serialize)]
struct Failure {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    key: Option<String>,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            key: None,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self {
            kind: "config",
            key: e.key().map(str::to_owned),
            message: e.to_string(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::Script { ref key, .. } => Self {
                kind: "config",
                key: Some(format!("scripts.{key}")),
                message: e.to_string(),
            },
            other => Self::new("simulation", other.to_string()),
        }
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Self::new("trace", e.to_string())
    }
}

impl From<ReplayError> for Failure {
    fn from(e: ReplayError) -> Self {
        Self::new("replay", e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    Ok(match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    })
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(value: &T) {
    emit(&format!(
        "{}\n",
        serde_json::to_string_pretty(value).expect("serializable output")
    ));
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config.config.as_deref())?;
    if let Some(s) = args.script {
        config.run.script = s;
    }
    if let Some(v) = args.variant {
        config.run.variant = v;
    }
    if let Some(s) = args.seed {
        config.run.seed = s;
    }
    let script = config.script(&config.run.script)?;
    let trace = run_scenario(&config, &script, config.run.variant, config.run.seed)?;
    if let Some(out) = &args.out {
        write_trace(&trace, out)?;
    }
    print_json(&json!({
        "script": script.name,
        "variant": config.run.variant,
        "seed": config.run.seed,
        "trace": args.out,
        "metrics": trace_metrics(&trace),
    }));
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let trace = read_trace(&args.trace)?;
    let report = match (&args.config, args.variant, trace.meta()) {
        (None, None, Some(_)) => replay_trace(&trace)?,
        (config, variant, meta) => {
            let config = match config {
                Some(p) => ScenarioConfig::load(p)?,
                None => meta.map(|m| m.config.clone()).unwrap_or_default(),
            };
            let variant = variant.or(meta.map(|m| m.variant)).unwrap_or_default();
            replay_with(&trace, &config, variant)?
        }
    };
    print_json(&report);
    match &report.first_divergence {
        None => Ok(()),
        Some(d) => Err(Failure::new(
            "replay_mismatch",
            format!("replay diverged at frame {} ({})", d.frame, d.field),
        )),
    }
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let mut out = Vec::new();
    for path in &args.traces {
        let trace = read_trace(path)?;
        let labelled = trace.events.iter().any(|e| e.truth.is_some());
        if args.require_labels && !labelled {
            return Err(Failure::new(
                "missing_labels",
                format!("{}: no ground-truth labels for accuracy", path.display()),
            ));
        }
        out.push(json!({ "trace": path, "metrics": trace_metrics(&trace) }));
    }
    print_json(&out);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let config = load_config(args.config.config.as_deref())?;
    let mut spec = SweepSpec::full(args.seeds);
    if !args.variants.is_empty() {
        spec.variants = args.variants;
    }
    if !args.scripts.is_empty() {
        spec.scripts = args.scripts;
    }
    let mode = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = run_sweep(&config, &spec, mode)?;
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&report).expect("serializable report");
        std::fs::write(out, text)
            .map_err(|e| Failure::new("io", format!("{}: {e}", out.display())))?;
    }
    emit(&report.render());
    Ok(())
}

struct ServeOptions {
    period: Duration,
    stale_ticks: u64,
}

async fn ws_route(
    ws: WebSocketUpgrade,
    State(opts): State<Arc<ServeOptions>>,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| live_session(socket, opts))
}

async fn live_session(socket: WebSocket, opts: Arc<ServeOptions>) {
    let (mut tx, mut rx) = socket.split();
    let mut conn = Connection::new(opts.stale_ticks);
    let mut clock = tokio::time::interval(opts.period);
    clock.set_missed_tick_behavior(MissedTickBehavior::Skip);
    tracing::info!("session opened");
    loop {
        let outgoing = tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => conn.handle_text(text.as_str()),
                Some(Ok(Message::Binary(_))) => conn.handle_text(""),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => None,
            },
            _ = clock.tick() => conn.tick(),
        };
        if let Some(m) = outgoing {
            if tx.send(Message::Text(m.to_json().into())).await.is_err() {
                break;
            }
        }
    }
    tracing::info!("session closed");
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let dt = ScenarioConfig::default().dt();
    if !(args.stale_after > 0.0 && args.stale_after.is_finite()) {
        return Err(Failure {
            kind: "usage",
            key: Some("stale_after".into()),
            message: "must be a positive number of seconds".into(),
        });
    }
    let opts = Arc::new(ServeOptions {
        period: Duration::from_secs_f64(dt),
        stale_ticks: (args.stale_after / dt).ceil() as u64,
    });
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new("io", e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| Failure::new("io", format!("bind {}: {e}", args.addr)))?;
        let local = listener
            .local_addr()
            .map_err(|e| Failure::new("io", e.to_string()))?;
        println!("{}", json!({ "listening": format!("ws://{local}/ws") }));
        tracing::info!(%local, "serving");
        let app = Router::new().route("/ws", get(ws_route)).with_state(opts);
        axum::serve(listener, app)
            .await
            .map_err(|e| Failure::new("io", e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Replay(a) => replay(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Serve(a) => serve(a),
        Command::Config => {
            emit(&ScenarioConfig::default().to_toml_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f }));
            ExitCode::FAILURE
        }
    }
}
