//! Command-line driver: runs Monte-Carlo experiments, validates configuration
//! files and replays recorded fusion events.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use mmw_slam::config::{ExportFormat, RunConfig};
use mmw_slam::export::{self, read_sync_file, replay_mismatches};
use mmw_slam::sim::{run_monte_carlo, RunMode};

#[derive(Debug, Parser)]
#[command(name = "mmw-slam", version, about = "Cooperative mmWave vehicle SLAM simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write the result files.
    Run(RunArgs),
    /// Check a configuration file and list every invalid field.
    Validate {
        #[arg(long, env = "MMWSLAM_CONFIG")]
        config: PathBuf,
    },
    /// Re-fuse the recorded uplinks of a sync file and compare with the stored maps.
    Replay {
        /// Path to a `syncs.json` written by `run`.
        syncs: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, env = "MMWSLAM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "MMWSLAM_MODE")]
    mode: Option<RunMode>,
    #[arg(long, env = "MMWSLAM_SEED")]
    seed: Option<u64>,
    /// Number of Monte-Carlo runs.
    #[arg(long, env = "MMWSLAM_NMC")]
    nmc: Option<usize>,
    #[arg(long, env = "MMWSLAM_PARTICLES")]
    particles: Option<usize>,
    /// Output directory.
    #[arg(long, env = "MMWSLAM_OUT")]
    out: Option<PathBuf>,
    /// Export formats, comma separated.
    #[arg(long, env = "MMWSLAM_FORMAT", value_delimiter = ',', value_parser = parse_format)]
    format: Option<Vec<ExportFormat>>,
}

fn parse_format(s: &str) -> Result<ExportFormat, String> {
    match s {
        "csv" => Ok(ExportFormat::Csv),
        "json" => Ok(ExportFormat::Json),
        other => Err(format!("unknown format `{other}` (expected csv or json)")),
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.nmc {
        cfg.monte_carlo_runs = n;
    }
    if let Some(p) = args.particles {
        cfg.particles = p;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(f) = &args.format {
        cfg.formats = f.clone();
    }
    Ok(cfg)
}

fn report_violations(cfg: &RunConfig) -> bool {
    let violations = cfg.validate();
    for v in &violations {
        eprintln!("invalid configuration: {v}");
    }
    violations.is_empty()
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = load_config(&args)?;
    if !report_violations(&cfg) {
        return Ok(ExitCode::from(2));
    }
    let scenario = cfg.to_scenario();
    info!(
        "mode {} seed {} runs {} particles {}",
        cfg.mode, cfg.seed, cfg.monte_carlo_runs, scenario.particles
    );
    let mc = run_monte_carlo(&scenario, cfg.mode, cfg.seed, cfg.monte_carlo_runs);
    for r in &mc.runs {
        if let Some(reason) = &r.diverged {
            warn!("run {} diverged: {reason}", r.run);
        }
    }
    let written = export::write_all(&cfg.output_dir, &mc, &scenario, &cfg.formats)
        .with_context(|| format!("writing results to {}", cfg.output_dir.display()))?;
    for row in export::metric_rows(&mc, &scenario).iter().filter(|r| r.scope == "all") {
        println!("{:<14} MAE {:>10.4}  RMSE {:>10.4}", row.quantity, row.mae, row.rmse);
    }
    for p in written {
        info!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => RunConfig::load(&config).map_err(Into::into).map(|cfg| {
            if report_violations(&cfg) {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }),
        Command::Replay { syncs } => read_sync_file(&syncs).map_err(Into::into).map(|file| {
            let bad = replay_mismatches(&file);
            println!("{} sync events, {} mismatches", file.syncs.len(), bad.len());
            for i in &bad {
                let s = &file.syncs[*i];
                eprintln!("mismatch: run {} k {} vehicle {}", s.run, s.k, s.vehicle);
            }
            if bad.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
