use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use satflow::commands::TRAJECTORY_FILE;
use satflow::{
    cmd_analyze, cmd_pair, cmd_run, cmd_sweep, cmd_verify, CliError, LoadedManifest, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "satflow",
    version,
    about = "Saturated aggregation-diffusion simulations and diagnostics"
)]
struct Cli {
    /// Assert that outputs depend on the manifest alone (no random numbers).
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate two manifests and track their L1 distance.
    Pair {
        #[arg(long, num_args = 1, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Oscillation cascades, alternative classification and convergence.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the trajectory in the output directory.
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate checks listed in the manifest's verify block.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate several manifests concurrently.
    Sweep {
        #[arg(long, num_args = 1, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seedless: bool) -> Result<LoadedManifest, CliError> {
    let m = LoadedManifest::from_path(path)?;
    if seedless {
        // Every initial-data preset is a closed-form or tabulated field and
        // the solver draws no random numbers, so a parsed manifest suffices.
        log::info!("{}: deterministic presets only", m.scenario());
    }
    Ok(m)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let seedless = cli.seedless;
    match cli.command {
        Command::Run { manifest, out } => {
            let m = load(&manifest, seedless)?;
            let dir = m.output_dir(out.as_deref());
            cmd_run(&m, &dir)?;
        }
        Command::Pair { manifest, out } => {
            if manifest.len() != 2 {
                return Err(CliError::Config(format!(
                    "pair needs exactly two --manifest arguments, got {}",
                    manifest.len()
                )));
            }
            let a = load(&manifest[0], seedless)?;
            let b = load(&manifest[1], seedless)?;
            let dir = out.unwrap_or_else(|| {
                PathBuf::from("out").join(format!("{}--{}", a.scenario(), b.scenario()))
            });
            let report = cmd_pair(&a, &b, &dir)?;
            log::info!("max L1 increase {}", report.max_increase);
        }
        Command::Analyze {
            manifest,
            traj,
            out,
        } => {
            let m = load(&manifest, seedless)?;
            let dir = m.output_dir(out.as_deref());
            let traj = traj.unwrap_or_else(|| m.output_dir(None).join(TRAJECTORY_FILE));
            cmd_analyze(&m, &traj, &dir)?;
        }
        Command::Verify {
            manifest,
            traj,
            out,
        } => {
            let m = load(&manifest, seedless)?;
            let dir = m.output_dir(out.as_deref());
            let traj = traj.unwrap_or_else(|| m.output_dir(None).join(TRAJECTORY_FILE));
            let summary = cmd_verify(&m, &traj, &dir)?;
            log::info!("{} checks passed", summary.passed);
        }
        Command::Sweep { manifest, out } => {
            let loaded = manifest
                .iter()
                .map(|p| load(p, seedless))
                .collect::<Result<Vec<_>, _>>()?;
            let mut worst: Option<CliError> = None;
            for (name, result) in cmd_sweep(&loaded, out.as_deref()) {
                if let Err(e) = result {
                    eprintln!("{name}: {e}");
                    if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                        worst = Some(e);
                    }
                }
            }
            if let Some(e) = worst {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
