use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use osgoodlab::harness::commands::{
    construct_h, moments, osgood_check, simulate, ConstructHConfig, MomentsConfig,
    OsgoodCheckConfig, SimulateConfig,
};
use osgoodlab::harness::{parse_config, read_json, run_ensemble, HarnessError, RunOptions};

#[derive(Parser)]
#[command(
    name = "osgoodlab",
    version,
    about = "Blow-up diagnostics for stochastic reaction-diffusion equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test the Osgood condition for a growth function
    OsgoodCheck(Common),
    /// Build the piecewise growth function from breakpoints of g
    ConstructH(Common),
    /// Simulate one trajectory
    Simulate(Common),
    /// Estimate sup-norm moments of the stochastic convolution
    Moments(Common),
    /// Run a trajectory ensemble with gap statistics
    Ensemble(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    threads: Option<usize>,
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Only fails when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::OsgoodCheck(c) => {
            let cfg: OsgoodCheckConfig = read_json(&c.config)?;
            let (r, _) = osgood_check(&cfg, &c.out)?;
            Ok(serde_json::to_string(&r.verdict).unwrap_or_default())
        }
        Command::ConstructH(c) => {
            let cfg: ConstructHConfig = read_json(&c.config)?;
            let (r, _) = construct_h(&cfg, &c.out)?;
            Ok(format!(
                "{} breakpoints{}, min segment integral {}",
                r.effective,
                if r.truncated { " (truncated)" } else { "" },
                r.min_segment_integral
            ))
        }
        Command::Simulate(c) => {
            let mut cfg: SimulateConfig = read_json(&c.config)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let (r, _) = simulate(&cfg, &c.out)?;
            Ok(format!(
                "final time {}, sup {}, levels reached {}, exploded {}",
                r.final_time,
                r.final_sup,
                r.ladder.len(),
                r.exploded
            ))
        }
        Command::Moments(c) => {
            init_threads(c.threads);
            let mut cfg: MomentsConfig = read_json(&c.config)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let (r, _) = moments(&cfg, &c.out)?;
            Ok(format!(
                "slope {} (reference {})",
                r.slope, r.reference_slope
            ))
        }
        Command::Ensemble(c) => {
            let mut cfg = parse_config(&c.config)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let cancel = Arc::new(AtomicBool::new(false));
            let flag = cancel.clone();
            // Without a handler, Ctrl-C kills the process and the resume state
            // written so far is still valid.
            let _ = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed));
            let opts = RunOptions {
                threads: c.threads,
                out: Some(c.out),
                cancel: Some(cancel),
            };
            let s = run_ensemble(&cfg, &opts)?.summary;
            Ok(format!(
                "exploded {}/{}, Borel-Cantelli sum {}",
                s.exploded, s.trajectories, s.borel_cantelli
            ))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let HarnessError::Interrupted {
                resume: Some(p), ..
            } = &e
            {
                eprintln!("rerun with the same --out to resume from {}", p.display());
            }
            ExitCode::FAILURE
        }
    }
}
