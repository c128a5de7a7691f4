mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AppError, Outcome};
use config::RunConfig;

/// Controlled-Lagrangian matching and Helmholtz checks for underactuated systems.
#[derive(Parser, Debug)]
#[command(name = "matchctl", version)]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print one JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Output directory for CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Residual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Grid points per shape coordinate.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Seed for sampled states.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Matching conditions over a shape grid.
    CheckMatching,
    /// Helmholtz conditions at sampled states.
    CheckHelmholtz,
    /// Tabulate τ and report gain bounds.
    SynthesizeTau,
    /// Integrate the closed loop and check energy drift.
    Simulate,
    /// Parameter sweep over gains.
    Sweep,
}

fn load(cli: &Cli) -> Result<RunConfig, AppError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.tol {
        cfg.tol = t;
    }
    if let Some(g) = cli.grid {
        cfg.grid = g;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, AppError> {
    let cfg = load(cli)?;
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::CheckMatching => commands::check_matching(&cfg),
        Command::CheckHelmholtz => commands::check_helmholtz(&cfg),
        Command::SynthesizeTau => commands::synthesize_tau(&cfg, &out),
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(o) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&o.json).unwrap_or_else(|_| "{}".into()));
            } else {
                println!("{}", o.text);
            }
            ExitCode::from(if o.pass { 0 } else { 1 })
        }
        Err(e) => {
            let (code, kind, msg) = match e {
                AppError::Config(m) => (2, "config", m),
                AppError::Compute(m) => (1, "numerical", m),
            };
            if cli.json {
                println!("{}", serde_json::json!({ "pass": false, "error": kind, "message": msg }));
            } else {
                eprintln!("error ({kind}): {msg}");
            }
            ExitCode::from(code)
        }
    }
}
