//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 certified bound violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rbhom::commands::{
    cmd_audit, cmd_bench, cmd_convergence, cmd_homogenize, cmd_offline, ProviderChoice,
};
use rbhom::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "rbhom",
    about = "Certified reduced-basis homogenization toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-field overrides, e.g. -s n_per_side=16.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reduced basis (greedy offline stage).
    Offline {
        #[command(flatten)]
        common: Common,
    },
    /// Audit certified bounds on a fresh test sample.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Basis container produced by `offline`.
        #[arg(long)]
        basis: PathBuf,
    },
    /// Solve the macroscopic homogenized problem.
    Homogenize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Coefficient engine: truth, rb, or both (emits the comparison).
        #[arg(long, default_value = "truth")]
        provider: String,
    },
    /// Wall-clock timings for the offline build and per-query costs.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        basis: PathBuf,
    },
    /// Homogenized-tensor refinement study on fixed media.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve_config(common: &Common) -> rbhom::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    for kv in &common.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            rbhom::Error::Config(format!("override {kv:?} is not KEY=VALUE"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> rbhom::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Offline { common } => {
            let cfg = resolve_config(common)?;
            let path = cmd_offline(&cfg)?;
            println!("basis written to {}", path.display());
        }
        Command::Audit { common, basis } => {
            let cfg = resolve_config(common)?;
            cmd_audit(&cfg, basis)?;
            println!("audit written to {}", cfg.out_dir.display());
        }
        Command::Homogenize { common, basis, provider } => {
            let cfg = resolve_config(common)?;
            let choice = match provider.as_str() {
                "truth" => ProviderChoice::Truth,
                "rb" => ProviderChoice::Rb,
                "both" => ProviderChoice::Both,
                other => {
                    return Err(rbhom::Error::Config(format!(
                        "unknown provider {other:?} (expected truth, rb or both)"
                    )))
                }
            };
            cmd_homogenize(&cfg, basis.as_deref(), choice)?;
            println!("homogenized run written to {}", cfg.out_dir.display());
        }
        Command::Bench { common, basis } => {
            let cfg = resolve_config(common)?;
            cmd_bench(&cfg, basis)?;
            println!("timings written to {}", cfg.out_dir.display());
        }
        Command::Convergence { common } => {
            let cfg = resolve_config(common)?;
            cmd_convergence(&cfg)?;
            println!("convergence table written to {}", cfg.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
