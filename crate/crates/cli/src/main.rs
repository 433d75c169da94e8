use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use ris_anm::harness::{self, emit_plot_script, RunOutput};
use ris_anm::{Error, ExperimentConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

/// Monte Carlo simulator for two-stage channel estimation with a hybrid RIS.
#[derive(Debug, Parser)]
#[command(name = "ris-anm-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the transmit power and distance grid of a config file.
    Run(RunArgs),
    /// Sweep the RIS-MS distance at a single transmit power.
    SweepDistance(RunArgs),
    /// Write a gnuplot script for an existing result CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script next to the result CSV.
    #[arg(long)]
    emit_plots: bool,
    /// Skip estimation and only evaluate the bounds.
    #[arg(long)]
    crlb_only: bool,
    /// Dump per-iteration solver traces.
    #[arg(long)]
    trace_solver: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        c.crlb_only |= self.crlb_only;
        c.trace_solver |= self.trace_solver;
        c.validate()?;
        Ok(c)
    }
}

fn report(out: &RunOutput, emit_plots: bool) -> Result<u8, Error> {
    info!("wrote {} rows to {}", out.rows.len(), out.csv.display());
    for g in &out.grid {
        println!(
            "p_t={:>5.1} dBm d_x={:>5.1} m rows={} failures={} median_mse_theta_mr={:.3e} se={:.3} bits/s/Hz",
            g.point.p_t_dbm, g.point.d_x, g.rows, g.failures, g.median_mse_theta_mr, g.se_bits
        );
    }
    if let Some(up) = out.distance_trend {
        println!("median MSE(theta_MR) increasing with distance: {up}");
    }
    if emit_plots {
        let gp = emit_plot_script(&out.csv)?;
        info!("wrote {}", gp.display());
    }
    if out.failures.is_empty() {
        Ok(0)
    } else {
        warn!("{} trials failed, see {}", out.failures.len(), out.failures_log.display());
        Ok(EXIT_SOLVER)
    }
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run(args) => report(&harness::run(&args.config()?)?, args.emit_plots),
        Command::SweepDistance(args) => report(&harness::sweep_distance(&args.config()?)?, args.emit_plots),
        Command::Plot { csv } => {
            let gp = emit_plot_script(&csv)?;
            println!("{}", gp.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.is_config() => {
            error!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
