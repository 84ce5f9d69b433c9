//! Command-line entry point.
//!
//! Every command reads one TOML configuration, writes `report.csv` and
//! `meta.txt` into the output directory, and prints the report location.
//! Malformed configuration exits 2; numerical or output failures exit 3.

mod config;
mod report;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::ConfigError;
use run::{CommandKind, Overrides, RunError};

#[derive(Parser)]
#[command(
    name = "riskyval",
    about = "Counterparty-risk pricing and CVA reports",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Price each product on deterministic curves under one default timing.
    Price(CommonArgs),
    /// Portfolio CVA by simulation.
    Cva(CommonArgs),
    /// Continuous against discrete default timing, per product.
    TableCtmDtm(CommonArgs),
    /// CVA across a collateral threshold sweep on a shared scenario set.
    TableCollateral(CommonArgs),
    /// CVA across a wrong-way correlation sweep, resimulated per row.
    TableWrongway(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.csv and meta.txt, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Path-count override; beats RISKYVAL_PATHS and the config.
    #[arg(long)]
    paths: Option<usize>,
    /// Seed override; beats RISKYVAL_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(line) => println!("{line}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> Result<String, RunError> {
    let (kind, args) = match cli.command {
        Cmd::Price(a) => (CommandKind::Price, a),
        Cmd::Cva(a) => (CommandKind::Cva, a),
        Cmd::TableCtmDtm(a) => (CommandKind::TableCtmDtm, a),
        Cmd::TableCollateral(a) => (CommandKind::TableCollateral, a),
        Cmd::TableWrongway(a) => (CommandKind::TableWrongway, a),
    };
    let overrides = resolve_overrides(&args)?;
    let text = std::fs::read_to_string(&args.config).map_err(|e| ConfigError::Unreadable {
        path: args.config.display().to_string(),
        message: e.to_string(),
    })?;
    let artifacts = run::execute(kind, &text, &overrides)?;
    let write = |name: &str, contents: &str| {
        report::write_atomic(&args.out, name, contents)
            .map_err(|e| RunError::Output(format!("cannot write {name}: {e}")))
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| RunError::Output(format!("cannot create {}: {e}", args.out.display())))?;
    let report_path = write("report.csv", &artifacts.report)?;
    write("meta.txt", &artifacts.meta)?;
    Ok(format!(
        "wrote {} ({} row{})",
        report_path.display(),
        artifacts.rows,
        if artifacts.rows == 1 { "" } else { "s" }
    ))
}

/// Precedence: command-line flag, then environment variable, then config.
fn resolve_overrides(args: &CommonArgs) -> Result<Overrides, RunError> {
    let paths = match args.paths {
        Some(p) => Some(p),
        None => env_value("RISKYVAL_PATHS")?,
    };
    let seed = match args.seed {
        Some(s) => Some(s),
        None => env_value("RISKYVAL_SEED")?,
    };
    Ok(Overrides { paths, seed })
}

fn env_value<T: std::str::FromStr>(name: &'static str) -> Result<Option<T>, RunError> {
    match std::env::var(name) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config::invalid(name, format!("cannot parse value {raw:?}")).into()),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(config::invalid(name, "value is not unicode").into())
        }
    }
}
