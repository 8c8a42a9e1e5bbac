use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use agentmesh::config::RunConfig;
use agentmesh::model::UserRequest;
use agentmesh::output::write_outputs;
use agentmesh::pipeline::Pipeline;
use agentmesh::sandbox::CancelToken;

#[derive(Parser)]
#[command(
    name = "agentmesh",
    version,
    about = "Plan, code, debug and review with cooperating LLM agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one request.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Request text.
    #[arg(
        long,
        conflicts_with = "request_file",
        required_unless_present = "request_file"
    )]
    request: Option<String>,
    /// File holding the request text.
    #[arg(long)]
    request_file: Option<PathBuf>,
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// live, record or replay.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_fix_attempts: Option<u32>,
    /// Per-execution timeout in seconds.
    #[arg(long)]
    sandbox_timeout: Option<f64>,
    /// Runtime command; must contain `{file}` exactly once.
    #[arg(long)]
    runtime_cmd: Option<String>,
    /// Default target file for unlabelled code.
    #[arg(long)]
    main_file: Option<PathBuf>,
    /// Script used as the verification entry point for every task.
    #[arg(long)]
    harness_file: Option<PathBuf>,
    /// File run once over the final workspace before review.
    #[arg(long)]
    integration_entry: Option<String>,
    /// Model name for every agent.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    /// Match cassette records by agent role only.
    #[arg(long)]
    lenient_replay: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let pairs = [
            ("backend", self.backend.clone()),
            ("cassette", path(&self.cassette)),
            ("out", path(&self.out)),
            (
                "max_fix_attempts",
                self.max_fix_attempts.map(|v| v.to_string()),
            ),
            (
                "sandbox_timeout",
                self.sandbox_timeout.map(|v| v.to_string()),
            ),
            ("runtime_cmd", self.runtime_cmd.clone()),
            ("main_file", path(&self.main_file)),
            ("harness_file", path(&self.harness_file)),
            ("integration_entry", self.integration_entry.clone()),
            ("model", self.model.clone()),
            ("base_url", self.base_url.clone()),
            (
                "strict_replay",
                self.lenient_replay.then(|| "false".to_string()),
            ),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }
}

fn run(args: RunArgs) -> Result<i32, String> {
    let text = match (&args.request, &args.request_file) {
        (Some(text), _) => text.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map(|t| t.trim().to_string())
            .map_err(|e| format!("reading {}: {e}", path.display()))?,
        (None, None) => return Err("one of --request or --request-file is required".into()),
    };
    let request = UserRequest::new(text).map_err(|e| e.to_string())?;

    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    for (key, value) in args.overrides() {
        config.set(key, &value).map_err(|e| e.to_string())?;
    }
    let out_dir = config.out_dir.clone();

    let cancel = CancelToken::new();
    let handler_token = cancel.clone();
    ctrlc::set_handler(move || handler_token.cancel())
        .map_err(|e| format!("installing interrupt handler: {e}"))?;

    let pipeline = Pipeline::new(config, cancel).map_err(|e| e.to_string())?;
    let report = pipeline.run(&request);
    write_outputs(&report, &out_dir)
        .map_err(|e| format!("writing outputs to {}: {e}", out_dir.display()))?;

    for outcome in &report.statuses {
        eprintln!(
            "task {}: {} [{}]",
            outcome.task.index, outcome.task.title, outcome.status
        );
    }
    if let Some(abort) = &report.abort {
        eprintln!("aborted: {}", abort.message);
    }
    eprintln!(
        "verdict: {}; outputs in {}",
        report.verdict().as_str(),
        out_dir.display()
    );
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run(args).unwrap_or_else(|message| {
            eprintln!("error: {message}");
            2
        }),
    };
    ExitCode::from(code as u8)
}
