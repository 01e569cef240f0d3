use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use willmore_experiments::commands::{
    cmd_export, cmd_flow, cmd_inpaint, cmd_train, cmd_validate_mcf, cmd_validate_willmore,
};
use willmore_experiments::{CliError, ExperimentConfig};

/// Learned mean curvature steps and Willmore flow experiments.
#[derive(Debug, Parser)]
#[command(name = "willmore", version)]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key.path=value`, applied after the configuration file; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the operator on each rung of the grid ladder.
    Train,
    /// Compare one-step mean curvature methods on shrinking circles.
    ValidateMcf,
    /// Compare Willmore flows on expanding circles and an optional test shape.
    ValidateWillmore,
    /// Evolve a shape by Willmore flow.
    Flow,
    /// Willmore flow restricted to a region.
    Inpaint,
    /// Convert a field between `.wfld`, `.csv` and `.pgm`.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Axis normal to the exported slice of a 3D field.
        #[arg(long, default_value_t = 2)]
        slice_axis: usize,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("WILLMORE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("WILLMORE_THREADS={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let mut overrides = Vec::new();
    if let Some(dir) = &cli.output_dir {
        overrides.push(format!("output_dir={:?}", dir.display().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend(cli.overrides.iter().cloned());
    let load = || ExperimentConfig::load(cli.config.as_deref(), &overrides);
    match cli.command {
        Command::Train => {
            for p in cmd_train(&load()?)? {
                info!("checkpoint {}", p.display());
            }
        }
        Command::ValidateMcf => {
            let v = cmd_validate_mcf(&load()?)?;
            println!("baseline {:.6}", v.baseline);
            for m in &v.methods {
                println!("{} {:.6}", m.method.name(), m.final_error());
            }
        }
        Command::ValidateWillmore => {
            let v = cmd_validate_willmore(&load()?)?;
            println!("baseline {:.6}", v.baseline);
            for m in &v.methods {
                println!("{} {:.6}", m.method.name(), m.final_error());
            }
            for (m, e) in &v.test_shape {
                println!("{} test shape {:.6}", m.name(), e.last().copied().unwrap_or(0.0));
            }
        }
        Command::Flow => {
            cmd_flow(&load()?)?;
        }
        Command::Inpaint => {
            cmd_inpaint(&load()?)?;
        }
        Command::Export {
            input,
            output,
            slice_axis,
        } => {
            cmd_export(&input, &output, slice_axis)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
