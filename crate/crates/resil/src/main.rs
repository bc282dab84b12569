use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use resil::commands::{self, CommandError, Report, EXIT_FAILURE};
use resil::model::{self, AutomatonDoc, ComponentDoc, LoadError, ModelDoc};

/// Resilience checker for joint system/environment models.
#[derive(Parser)]
#[command(name = "resil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Least k such that the model is k-resilient.
    Check {
        model: PathBuf,
        /// Also decide k-resilience for this k.
        #[arg(long)]
        k: Option<usize>,
        /// Include every backward basis in the report.
        #[arg(long)]
        trace: bool,
    },
    /// Bounds on k_min from the start state.
    Approx {
        model: PathBuf,
        /// Forward exploration depth for the lower bound.
        #[arg(long, value_name = "L")]
        under: Option<usize>,
        /// Upper bound through the inverted system.
        #[arg(long)]
        over: bool,
    },
    /// Backward saturation of the safety ideal.
    Prestar { model: PathBuf },
    /// Minimal states reachable from the start state within a depth.
    Post {
        model: PathBuf,
        #[arg(long, value_name = "L")]
        depth: usize,
    },
    /// Joins system and environment rules into one model.
    Compose {
        system: PathBuf,
        environment: PathBuf,
        /// Control automaton replacing the one in the system model.
        #[arg(long)]
        automaton: Option<PathBuf>,
    },
}

fn compose(system: &Path, env: &Path, automaton: Option<&Path>) -> Result<Report, CommandError> {
    let sys: ModelDoc = model::parse(&model::read(system)?)?;
    let env: ComponentDoc = model::parse(&model::read(env)?)?;
    let aut: Option<AutomatonDoc> = match automaton {
        Some(p) => Some(model::parse(&model::read(p)?)?),
        None => None,
    };
    let doc = commands::compose(&sys, &env, aut.as_ref()).map_err(|e| CommandError::Load(LoadError::Invalid(e)))?;
    Ok(Report { json: serde_json::to_value(doc).expect("plain data"), exit: 0 })
}

fn run(cli: &Cli) -> Result<Report, CommandError> {
    match &cli.command {
        Command::Check { model, k, trace } => commands::check(&commands::open(model)?, *k, *trace),
        Command::Approx { model, under, over } => commands::approx(&commands::open(model)?, *under, *over),
        Command::Prestar { model } => commands::prestar(&commands::open(model)?),
        Command::Post { model, depth } => commands::post(&commands::open(model)?, *depth),
        Command::Compose { system, environment, automaton } => compose(system, environment, automaton.as_deref()),
    }
}

fn emit(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("plain data");
    // A closed pipe is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(r) => {
            emit(&r.json);
            ExitCode::from(r.exit as u8)
        }
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("resil: {line}");
            }
            emit(&e.to_json());
            ExitCode::from(EXIT_FAILURE as u8)
        }
    }
}
