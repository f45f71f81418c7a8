use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use drae_cli::commands::parse_vector;
use drae_cli::{cmd_eval, cmd_plan, cmd_retrieve, cmd_run_stream, CliError, CliResult, RunConfig};
use log::LevelFilter;

#[derive(Debug, Parser)]
#[command(name = "drae", version, about = "Lifelong mixture-of-experts experiments")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent replicates.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the configured stream and write logs, metrics and a checkpoint.
    RunStream,
    /// Print the penalised retrieval for one query.
    Retrieve {
        #[arg(long)]
        corpus: PathBuf,
        /// Inline query, e.g. "0.1,0.2,0.3".
        #[arg(long, conflicts_with = "query_file", required_unless_present = "query_file")]
        query: Option<String>,
        #[arg(long)]
        query_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Search a rule set for a plan from the given predicates.
    Plan {
        #[arg(long)]
        rules: PathBuf,
        /// Comma-separated predicate names true initially.
        #[arg(long, value_delimiter = ',')]
        initial: Vec<String>,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
    },
    /// Evaluate a checkpoint on the configured stream without training.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn init_logging() -> CliResult<()> {
    let level = match std::env::var("DRAE_LOG_LEVEL").ok().as_deref() {
        None | Some("") => LevelFilter::Warn,
        Some("error") => LevelFilter::Error,
        Some("warn") => LevelFilter::Warn,
        Some("info") => LevelFilter::Info,
        Some("debug") => LevelFilter::Debug,
        Some(other) => {
            return Err(CliError::Input(anyhow!("DRAE_LOG_LEVEL must be error, warn, info or debug, got {other:?}")))
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    Ok(())
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Input(anyhow!("--config is required")))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.into()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_logging()?;
    match &cli.command {
        Command::RunStream => {
            let cfg = load_config(&cli)?;
            let merged = cmd_run_stream(&cfg, cli.threads)?;
            println!("{}", json(&merged.mean)?);
        }
        Command::Retrieve { corpus, query, query_file, lambda } => {
            let text = match (query, query_file) {
                (Some(q), _) => q.clone(),
                (None, Some(p)) => std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(anyhow!("reading query {}: {e}", p.display())))?,
                (None, None) => return Err(CliError::Input(anyhow!("--query or --query-file is required"))),
            };
            println!("{}", json(&cmd_retrieve(corpus, &parse_vector(&text)?, *lambda)?)?);
        }
        Command::Plan { rules, initial, budget } => {
            print!("{}", cmd_plan(rules, initial, *budget, cli.seed.unwrap_or(0))?);
        }
        Command::Eval { checkpoint } => {
            let cfg = load_config(&cli)?;
            println!("{}", json(&cmd_eval(checkpoint, &cfg, cli.seed)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
