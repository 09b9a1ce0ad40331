use clap::{Parser, Subcommand};
use factor_copula::copula::Family;
use factor_copula::model::Structure;
use factor_copula_cli::commands;
use factor_copula_cli::config::RunConfig;
use factor_copula_cli::csv::read_csv;
use factor_copula_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Fit, select, simulate and goodness-of-fit-test bi-factor and second-order
/// copula models for ordinal item response data.
#[derive(Parser)]
#[command(name = "factor-copula", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (key = value lines, groups.<name> = items).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Input dataset CSV (header row of item names, integer cells).
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Output directory for report.txt / report.json (and data.csv).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Number of Gauss-Legendre quadrature points (overrides config).
    #[arg(long, global = true)]
    nq: Option<usize>,

    /// Simulation seed (overrides config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated copula families (overrides config).
    #[arg(long, global = true)]
    families: Option<String>,

    /// Model structure: bifactor or secondorder (overrides config).
    #[arg(long, global = true)]
    structure: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Two-step IFM fit with standard errors.
    Fit,
    /// Stepwise per-factor copula family selection by AIC.
    Select,
    /// Draw an ordinal dataset from a configured model.
    Simulate,
    /// Limited-information M2 statistic and discrepancy summary.
    Gof,
    /// Polychoric correlation and semi-correlation diagnostics.
    Diagnose,
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(nq) = cli.nq {
        config.nq = nq;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(structure) = &cli.structure {
        config.structure = Structure::parse_tag(structure)
            .ok_or_else(|| CliError::usage(format!("unknown structure '{structure}'")))?;
    }
    if let Some(families) = &cli.families {
        let fams = families
            .split(',')
            .map(|t| {
                Family::parse_tag(t.trim())
                    .ok_or_else(|| CliError::usage(format!("unknown family '{}'", t.trim())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        config.families = Some(fams);
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = build_config(cli)?;
    let data = match &cli.data {
        Some(path) => Some(read_csv(path, &config)?),
        None => None,
    };
    let report = match cli.command {
        Command::Fit => commands::run_fit(&config, &data)?,
        Command::Select => commands::run_select(&config, &data)?,
        Command::Simulate => commands::run_simulate(&config, &cli.out)?,
        Command::Gof => commands::run_gof(&config, &data)?,
        Command::Diagnose => commands::run_diagnose(&config, &data)?,
    };
    report.write(&cli.out)?;
    print!("{}", report.render_text());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print through the error path with success.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
