//! Command-line front end: configuration loading, flag overrides and the
//! `generate`, `run`, `sweep`, `eval` and `export-features` subcommands.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jda_core::eval::Method;
use jda_core::Domain;

pub use config::RunConfig;
pub use output::Outputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] jda_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("output: {0}")]
    Output(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    /// The diagnostic folded onto a single line.
    pub fn one_line(&self) -> String {
        self.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeFlag {
    Mda,
    Jda,
    /// Source-only network, adaptation skipped.
    None,
}

impl From<ModeFlag> for Method {
    fn from(m: ModeFlag) -> Self {
        match m {
            ModeFlag::Mda => Method::DtnMda,
            ModeFlag::Jda => Method::DtnJda,
            ModeFlag::None => Method::Cnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainFlag {
    Source,
    Target,
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for data, initialization and batching.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adaptation weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeFlag>,
    /// Stock task name; replaces any data source from the config.
    #[arg(long)]
    pub task: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "jda", version, about = "Deep transfer networks for fault diagnosis with joint MMD adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the source, unlabeled-target and test-target pools as CSV.
    Generate(Common),
    /// Pretrain, adapt with one method and evaluate.
    Run(Common),
    /// Run a grid of lambdas, seeds and methods.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambda grid.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated methods (cnn, mda, jda).
        #[arg(long)]
        methods: Option<String>,
    },
    /// Score a saved model on labeled windows.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Labeled CSV; defaults to the task's target test pool.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write feature-layer activations for external embedding tools.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// CSV windows; defaults to all three task pools.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Domain tag for rows read from `--data`.
        #[arg(long, value_enum, default_value = "target")]
        domain: DomainFlag,
    },
}

/// Loads the config file (if any) and applies the flags on top.
pub fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(lambda) = common.lambda {
        cfg.train.lambda = lambda;
        cfg.lambdas = Some(vec![lambda]);
    }
    if let Some(mode) = common.mode {
        cfg.method = mode.into();
        cfg.methods = Some(vec![cfg.method]);
    }
    if let Some(task) = &common.task {
        cfg.set_task(task);
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

/// Parses arguments, runs the command and commits its outputs.
pub fn run_cli<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(common) => {
            let cfg = resolve(&common)?;
            let dir = cfg.output_dir()?.to_path_buf();
            commands::generate(&cfg)?.commit(&dir)
        }
        Command::Run(common) => {
            let cfg = resolve(&common)?;
            let dir = cfg.output_dir()?.to_path_buf();
            commands::run(&cfg)?.commit(&dir)
        }
        Command::Sweep { common, lambdas, seeds, methods } => {
            let mut cfg = resolve(&common)?;
            if lambdas.is_some() {
                cfg.lambdas = lambdas;
            }
            if seeds.is_some() {
                cfg.seeds = seeds;
            }
            if let Some(m) = methods {
                cfg.methods = Some(commands::parse_methods(&m)?);
            }
            let dir = cfg.output_dir()?.to_path_buf();
            let (_, out) = commands::sweep(&cfg)?;
            out.commit(&dir)?;
            for line in out.get("report.txt").unwrap_or_default().lines() {
                if line.starts_with("summary.") {
                    println!("{line}");
                }
            }
            Ok(())
        }
        Command::Eval { common, model, data } => {
            let cfg = resolve(&common)?;
            let dir = cfg.output_dir()?.to_path_buf();
            commands::eval(&cfg, &model, data.as_deref())?.commit(&dir)
        }
        Command::ExportFeatures { common, model, data, domain } => {
            let cfg = resolve(&common)?;
            let dir = cfg.output_dir()?.to_path_buf();
            let domain = match domain {
                DomainFlag::Source => Domain::Source,
                DomainFlag::Target => Domain::Target,
            };
            commands::features(&cfg, &model, data.as_deref(), domain)?.commit(&dir)
        }
    }
}
