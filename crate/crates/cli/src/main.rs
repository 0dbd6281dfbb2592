mod commands;
mod config;
mod error;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "platoon",
    version,
    about = "Distributed platoon control: topology analysis, gain synthesis, \
             closed-loop simulation and leader-log replay"
)]
struct Cli {
    /// Echoed into the run header; every pipeline stage is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a topology's discs and spectrum; report bounds and closed-loop norms
    Analyze {
        /// Experiment config or bare topology JSON
        #[arg(long)]
        config: PathBuf,
        /// Directory for analysis.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find feasible gains for a performance target; write controller.json
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the closed loop; write trace.csv and summary.json
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's integration step
        #[arg(long)]
        dt: Option<f64>,
        /// Override the config's horizon in seconds
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Smooth a recorded leader log; write smoothed.csv and leader.json
    Ingest {
        /// CSV with t and position columns; velocity/acceleration optional
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fraction of samples in each local regression window
        #[arg(long, default_value_t = 0.05)]
        span: f64,
        /// Outlier-rejection reweighting passes
        #[arg(long, default_value_t = 2)]
        iters: usize,
        /// Output step; defaults to the median input spacing
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Tabulate completed simulation runs found under a directory
    Report { dir: PathBuf },
}

fn main() {
    // die quietly when a downstream pipe closes instead of panicking mid-print
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{e}");
                std::process::exit(0);
            }
            ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                eprintln!("error[usage]: missing subcommand (see --help)");
                std::process::exit(1);
            }
            _ => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or("invalid arguments");
                let first = first.strip_prefix("error: ").unwrap_or(first);
                eprintln!("error[usage]: {first}");
                std::process::exit(1);
            }
        },
    };
    if let Some(seed) = cli.seed {
        println!("seed: {seed} (recorded only; all stages are deterministic)");
    }
    let result = match &cli.command {
        Command::Analyze { config, out } => commands::analyze(config, out.as_deref()),
        Command::Synthesize { config, out } => commands::synthesize(config, out.as_deref()),
        Command::Simulate {
            config,
            out,
            dt,
            horizon,
        } => commands::run_simulate(config, out.as_deref(), *dt, *horizon),
        Command::Ingest {
            input,
            out,
            span,
            iters,
            dt,
        } => commands::ingest(input, out.as_deref(), *span, *iters, *dt),
        Command::Report { dir } => commands::report(dir),
    };
    if let Err(e) = result {
        eprintln!("error[{}]: {e}", e.kind());
        std::process::exit(e.exit_code());
    }
}
