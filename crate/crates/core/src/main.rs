use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use asymreg::cli::{parse_config, run, RunConfig};
use asymreg::flow::ButcherTableau;

#[derive(Parser)]
#[command(name = "asymreg", version, about = "Asymptotical regularization with convex penalties")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override a config value, e.g. `--set flow.dt=0.01` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory, replacing `output` from the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Base RNG seed, replacing `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment selected in the config.
    Run { config: PathBuf },
    /// Noise-level sweep with rate fit.
    Sweep { config: PathBuf },
    /// Runge-Kutta order study against the closed-form linear solution.
    Order { config: PathBuf },
    /// Check a Butcher tableau file and print its classification.
    ValidateTableau { path: PathBuf },
}

fn init_logging(level: &str, quiet: bool) {
    let level = if quiet { "error" } else { level };
    env_logger::Builder::new()
        .parse_filters(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn load(cli: &Cli, config: &Path, forced_kind: Option<&str>) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(kind) = forced_kind {
        overrides.push(format!("experiment.kind={kind}"));
    }
    if let Some(out) = &cli.output {
        overrides.push(format!("output={:?}", out.display().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("experiment.seed={seed}"));
    }
    parse_config(config, &overrides).with_context(|| format!("loading {}", config.display()))
}

fn execute(cli: &Cli) -> Result<i32> {
    let (config, kind) = match &cli.command {
        Command::ValidateTableau { path } => {
            init_logging("warn", cli.quiet);
            let tab = ButcherTableau::from_file(path).with_context(|| format!("reading {}", path.display()))?;
            let report = tab.validate();
            println!("{report}");
            return Ok(if report.is_usable() { 0 } else { 1 });
        }
        Command::Run { config } => (config, None),
        Command::Sweep { config } => (config, Some("rate_sweep")),
        Command::Order { config } => (config, Some("order_study")),
    };
    let cfg = load(cli, config, kind)?;
    init_logging(&cfg.log_level, cli.quiet);
    let report = run(&cfg).context("run failed")?;
    for a in &report.artifacts {
        log::info!("wrote {}", a.display());
    }
    if !cli.quiet {
        println!("{}", report.message);
    }
    Ok(report.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
