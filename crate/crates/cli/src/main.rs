use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covnn_cli::commands;
use covnn_cli::config::PipelineConfig;
use covnn_cli::{init_threads, CliError, CliResult};

/// Covariance neural networks for brain-age-gap analysis.
#[derive(Parser)]
#[command(name = "covnn", version)]
struct Cli {
    /// Pipeline configuration (JSON or TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.output_dir` (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic training and test cohorts.
    Synth,
    /// Train a VNN and fit the age-bias correction.
    Train {
        /// Healthy training cohort CSV; overrides `paths.train_csv`.
        #[arg(long)]
        train_csv: Option<PathBuf>,
    },
    /// Predict brain age and Δ-Age for a cohort.
    Predict {
        /// Trained model JSON; overrides `paths.model`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Covariance JSON written by `train`; overrides `paths.covariance`.
        #[arg(long)]
        covariance: Option<PathBuf>,
        /// Age-bias JSON written by `train`; overrides `paths.bias`.
        #[arg(long)]
        bias: Option<PathBuf>,
        /// Cohort CSV; overrides `paths.test_csv`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file stem.
        #[arg(long, default_value = "delta_age")]
        stem: String,
    },
    /// Regional ANCOVA and Δ-Age group comparison over brain-age reports.
    GroupStats {
        /// Brain-age report JSON (repeatable); overrides `paths.reports`.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
    },
    /// Train at one atlas resolution, evaluate at others.
    Transfer,
    /// Perturbation sweeps and the PCA contrast.
    Stability,
    /// Full synthetic pipeline in one run.
    Demo,
}

fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    init_threads(std::env::var("COVNN_THREADS").ok().as_deref())?;
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Config(format!("config not found: {}", p.display())));
            }
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.or_else(|| cfg.paths.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let set = |slot: &mut Option<PathBuf>, v: Option<PathBuf>| {
        if v.is_some() {
            *slot = v;
        }
    };
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg, &out),
        Command::Train { train_csv } => {
            set(&mut cfg.paths.train_csv, train_csv);
            commands::cmd_train(&cfg, &out)
        }
        Command::Predict { model, covariance, bias, input, stem } => {
            set(&mut cfg.paths.model, model);
            set(&mut cfg.paths.covariance, covariance);
            set(&mut cfg.paths.bias, bias);
            set(&mut cfg.paths.test_csv, input);
            commands::cmd_predict(&cfg, &out, &stem)
        }
        Command::GroupStats { reports } => {
            if !reports.is_empty() {
                cfg.paths.reports = reports;
            }
            commands::cmd_group_stats(&cfg, &out)
        }
        Command::Transfer => commands::cmd_transfer(&cfg, &out),
        Command::Stability => commands::cmd_stability(&cfg, &out),
        Command::Demo => commands::cmd_demo(&cfg, &out).map(|(files, _)| files),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::Config(first.to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
