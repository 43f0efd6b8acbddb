mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Rank nodes of an interaction network from graph embeddings and node
/// attributes.
#[derive(Debug, Parser)]
#[command(name = "targetrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed the graph and write embeddings.tsv.
    Embed,
    /// Filter, embed, train the subsampled ensemble, rank and evaluate.
    Pipeline,
    /// Cross-validated AUC for every embedder x classifier pair.
    Compare,
    /// Write a planted-label benchmark (edges, features, labels).
    Synth,
    /// Percentile overlap and enrichment of an existing ranking.
    Eval,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with run settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// node2vec, line, imgagn or none.
    #[arg(long, global = true)]
    method: Option<String>,
    /// dt, rf or gbt.
    #[arg(long, global = true)]
    classifier: Option<String>,
    /// Embedding width.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Ensemble size (number of subsampled folds).
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Any other setting, as KEY=VALUE. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or usage (exit 2).
    Config(String),
    /// Failure while running (exit 1).
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn stage(stage: &str) -> impl Fn(targetrank::Error) -> CliError + '_ {
        move |e| CliError::Runtime(format!("{stage}: {e}"))
    }
}

fn overrides(c: &Common) -> Result<Vec<(String, toml::Value)>, CliError> {
    let mut out = Vec::new();
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        out.push((k.trim().to_string(), config::parse_value(v.trim())));
    }
    let mut put = |k: &str, v: toml::Value| out.push((k.to_string(), v));
    if let Some(s) = c.seed {
        let s = i64::try_from(s).map_err(|_| CliError::Config("seed: must fit in 63 bits".into()))?;
        put("seed", toml::Value::Integer(s));
    }
    if let Some(o) = &c.out {
        put("out", toml::Value::String(o.display().to_string()));
    }
    if let Some(m) = &c.method {
        put("method", toml::Value::String(m.clone()));
    }
    if let Some(m) = &c.classifier {
        put("classifier", toml::Value::String(m.clone()));
    }
    if let Some(d) = c.dim {
        put("dim", toml::Value::Integer(d as i64));
    }
    if let Some(f) = c.folds {
        put("folds", toml::Value::Integer(f as i64));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::resolve(
        cli.common.config.as_deref(),
        std::env::vars(),
        &overrides(&cli.common)?,
    )?;
    match cli.command {
        Command::Embed => commands::embed_graph(&cfg),
        Command::Pipeline => commands::pipeline(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
