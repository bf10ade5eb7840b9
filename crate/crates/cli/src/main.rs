use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::*;
use config::{Config, GlobalArgs};
use output::Report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<polylab::Error> for CliError {
    fn from(e: polylab::Error) -> Self {
        use polylab::Error as E;
        let msg = e.to_string();
        match e {
            E::Invalid(_) | E::Parse(_) | E::Domain(_) => CliError::Validation(msg),
            E::Capacity { .. } => CliError::Capacity(msg),
            E::Numerical(_) | E::OutOfDomain(_) => CliError::Numerical(msg),
            E::Io(_) => CliError::Io(msg),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "polylab", version, about = "Stretched polymers in a random potential")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an environment and write it as POLYENV text.
    GenEnv(GenEnvArgs),
    /// Exact path enumeration, optionally checking the renewal identity.
    Enumerate(EnumerateArgs),
    /// Quenched partition functions by the transfer recursion.
    Dp(DpArgs),
    /// Annealed partition functions by averaging over environments.
    McAnnealed,
    /// Speed, diffusivity and renewal mass of the annealed model.
    Renewal(RenewalArgs),
    /// Characteristic-function checks of the central limit theorem.
    Clt(CltArgs),
    /// Tail mass of the quenched endpoint law away from n v.
    Lln(LlnArgs),
    /// Exact mixingale profile of the irreducible fluctuation term.
    Mixingale(MixingaleArgs),
    /// Randomized checks of the replica inequalities.
    Replica(ReplicaArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenEnv(_) => "gen-env",
            Command::Enumerate(_) => "enumerate",
            Command::Dp(_) => "dp",
            Command::McAnnealed => "mc-annealed",
            Command::Renewal(_) => "renewal",
            Command::Clt(_) => "clt",
            Command::Lln(_) => "lln",
            Command::Mixingale(_) => "mixingale",
            Command::Replica(_) => "replica",
        }
    }

    fn params(&self) -> serde_json::Value {
        let v = match self {
            Command::GenEnv(a) => serde_json::to_value(a),
            Command::Enumerate(a) => serde_json::to_value(a),
            Command::Dp(a) => serde_json::to_value(a),
            Command::McAnnealed => Ok(serde_json::json!({})),
            Command::Renewal(a) => serde_json::to_value(a),
            Command::Clt(a) => serde_json::to_value(a),
            Command::Lln(a) => serde_json::to_value(a),
            Command::Mixingale(a) => serde_json::to_value(a),
            Command::Replica(a) => serde_json::to_value(a),
        };
        v.unwrap_or(serde_json::Value::Null)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::resolve(&cli.global)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let out = match &cli.command {
        Command::GenEnv(a) => gen_env(&cfg, a),
        Command::Enumerate(a) => enumerate(&cfg, a),
        Command::Dp(a) => dp(&cfg, a),
        Command::McAnnealed => mc(&cfg),
        Command::Renewal(a) => renewal(&cfg, a),
        Command::Clt(a) => clt(&cfg, a),
        Command::Lln(a) => lln(&cfg, a),
        Command::Mixingale(a) => mixingale(&cfg, a),
        Command::Replica(a) => replica(&cfg, a),
    }?;
    let report = Report {
        schema: output::SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name().into(),
        params: cli.command.params(),
        config: cfg.clone(),
        seeds: out.seeds,
        wall_time_s: cfg.timing.then(|| start.elapsed().as_secs_f64()),
        data: out.data,
        table: out.table,
    };
    let text = match out.raw {
        Some(raw) => raw,
        None => report.render(cfg.format)?,
    };
    output::emit(&text, cfg.out.as_deref())?;
    if let Some(p) = &cfg.plot {
        output::write_atomic(p, &report.to_plot())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polylab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
