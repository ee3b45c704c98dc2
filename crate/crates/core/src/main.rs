use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bohmlab_core::pipeline::commands::{self, Context};
use bohmlab_core::pipeline::RunConfig;
use bohmlab_core::Result;

#[derive(Parser)]
#[command(name = "bohmlab", version, about = "Weak-value trajectory reconstruction pipeline")]
struct Cli {
    /// INI run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for every output.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the scan: measurement and fringe CSVs.
    Simulate,
    /// Fit coupling coefficients from calibration samples.
    Calibrate {
        /// Sample CSVs; the default protocol is synthesized when none are given.
        #[arg(long = "samples")]
        samples: Vec<PathBuf>,
        /// Readout noise of synthesized samples, rad.
        #[arg(long, default_value_t = 0.01)]
        sigma_phi: f64,
        /// Also bisect the noise scale towards this sigma(R_e), 1/s.
        #[arg(long)]
        tune_noise: Option<f64>,
    },
    /// Recover weak values from the measurements.
    Invert {
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Trace streamlines and render the heatmap.
    Trajectories {
        #[arg(long)]
        weak_values: Option<PathBuf>,
        #[arg(long)]
        fringe: Option<PathBuf>,
    },
    /// Effective squared mass map and histogram.
    Mass {
        #[arg(long)]
        weak_values: Option<PathBuf>,
    },
    /// Continuity residuals and their Gaussian fits.
    Continuity {
        #[arg(long)]
        weak_values: Option<PathBuf>,
        #[arg(long)]
        fringe: Option<PathBuf>,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let ctx = Context::new(config, &cli.out)?;
    commands::with_threads(cli.threads, || match &cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Calibrate {
            samples,
            sigma_phi,
            tune_noise,
        } => {
            let mut msg = commands::cmd_calibrate(&ctx, samples, *sigma_phi)?;
            if let Some(target) = tune_noise {
                let s = commands::tune_noise_scale(&ctx.config, *target, 100.0)?;
                msg.push_str(&format!("\nnoise scale for sigma(R_e) = {target}: {s}"));
            }
            Ok(msg)
        }
        Command::Invert { measurements } => commands::cmd_invert(&ctx, measurements.as_deref()),
        Command::Trajectories { weak_values, fringe } => {
            commands::cmd_trajectories(&ctx, weak_values.as_deref(), fringe.as_deref())
        }
        Command::Mass { weak_values } => commands::cmd_mass(&ctx, weak_values.as_deref()),
        Command::Continuity { weak_values, fringe } => {
            commands::cmd_continuity(&ctx, weak_values.as_deref(), fringe.as_deref())
        }
        Command::Report { run } => commands::cmd_report(&ctx, run.as_deref()),
    })?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
