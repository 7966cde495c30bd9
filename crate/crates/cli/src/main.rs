mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, EXIT_CODES_HELP};

#[derive(Parser, Debug)]
#[command(name = "vixsig", version, about = "VIX futures curve models, trading signals and backtests", after_help = EXIT_CODES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for fold and label parallelism (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    epsilon_bps: Option<f64>,
    /// piecewise_linear | exponential
    #[arg(long, global = true)]
    utility: Option<String>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// contiguous | non-adjacent
    #[arg(long, global = true)]
    fold_config: Option<String>,
    #[arg(long, global = true)]
    integer_contracts: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate the market data; writes panel.json.
    Ingest,
    /// Constant-maturity prices and roll yields; writes curves.csv.
    Curves,
    /// Fit the curve model; writes model.json.
    Fit,
    /// Train the signal network on the fitted model; writes network.json.
    Train,
    /// k-fold backtest of the trained signal; writes metrics.csv and path.csv.
    Backtest,
    /// Today's action and contract counts; writes signal.csv.
    Signal {
        /// Signal date (default: last usable date).
        #[arg(long)]
        date: Option<String>,
        /// Portfolio value P.
        #[arg(long)]
        value: Option<f64>,
        /// Use this action instead of the network's, e.g. "(0,0)".
        #[arg(long, allow_hyphen_values = true)]
        action: Option<String>,
    },
    /// Simulate one- and five-month rolling index paths; writes simulate.csv.
    Simulate,
    /// Fixed-action and reference benchmarks per fold; writes bench_metrics.csv.
    Bench,
    /// Generate the synthetic futures fixture.
    Fixture,
    /// Print every config key with its default.
    Keys,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Curves => "curves",
            Command::Fit => "fit",
            Command::Train => "train",
            Command::Backtest => "backtest",
            Command::Signal { .. } => "signal",
            Command::Simulate => "simulate",
            Command::Bench => "bench",
            Command::Fixture => "fixture",
            Command::Keys => "keys",
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let flags: [(&str, Option<String>); 8] = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("jobs", cli.jobs.map(|v| v.to_string())),
        ("epsilon_bps", cli.epsilon_bps.map(|v| v.to_string())),
        ("utility", cli.utility.clone()),
        ("gamma", cli.gamma.map(|v| v.to_string())),
        ("folds", cli.folds.map(|v| v.to_string())),
        ("fold_config", cli.fold_config.clone()),
        (
            "out",
            cli.out.as_ref().map(|p| p.to_string_lossy().into_owned()),
        ),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if cli.integer_contracts {
        cfg.set("integer_contracts", "true")?;
    }
    if let Command::Signal {
        date,
        value,
        action,
    } = &cli.command
    {
        if let Some(d) = date {
            cfg.set("date", d)?;
        }
        if let Some(v) = value {
            cfg.set("value", &v.to_string())?;
        }
        if let Some(a) = action {
            cfg.set("action", a)?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    let jobs: usize = cfg.require("jobs")?;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    let name = cli.command.name();
    match cli.command {
        Command::Keys => {
            for s in config::SETTINGS {
                println!("{} = {}    # {}", s.key, s.default, s.help);
            }
            return Ok(());
        }
        Command::Fixture => {
            let outputs = commands::fixture(&cfg)?;
            commands::write_manifest(&cfg, name, "", &outputs)?;
            return Ok(());
        }
        _ => {}
    }
    // Every pipeline command needs the seed, even when it draws nothing.
    cfg.seed()?;
    let hash = cfg.hash()?;
    let outputs = match cli.command {
        Command::Ingest => commands::ingest(&cfg, &hash)?,
        Command::Curves => commands::curves(&cfg, &hash)?,
        Command::Fit => commands::fit(&cfg, &hash)?,
        Command::Train => commands::train_cmd(&cfg, &hash)?,
        Command::Backtest => commands::backtest(&cfg, &hash)?,
        Command::Signal { .. } => commands::signal(&cfg, &hash)?,
        Command::Simulate => commands::simulate(&cfg, &hash)?,
        Command::Bench => commands::bench(&cfg, &hash)?,
        Command::Fixture | Command::Keys => unreachable!("handled above"),
    };
    commands::write_manifest(&cfg, name, &hash, &outputs)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code() as u8)
        }
    }
}
