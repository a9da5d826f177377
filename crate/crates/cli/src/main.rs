//! `stokes-dd`: runs and checks the unsteady Stokes schemes.
//!
//! Exit codes: 0 success, 1 a monitor or solver failed, 2 bad configuration.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "stokes-dd",
    version,
    about = "Unsteady Stokes solver with domain-decomposition time stepping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One simulation: per-step CSV, field snapshots and a manifest.
    Run(CommonArgs),
    /// Step-size and grid refinement against the manufactured solution.
    Converge(CommonArgs),
    /// Unforced random-data runs over a range of step sizes.
    Stability(CommonArgs),
    /// Adjointness, spectral, partition, splitting and dense-oracle checks.
    Verify(CommonArgs),
}

/// Config file plus per-key overrides. Every key of the file format is
/// accepted as a flag; flags win over the file.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Configuration file (`key = value` lines, optional `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: KeyOverrides,
}

macro_rules! key_overrides {
    ($($field:ident => $help:literal),* $(,)?) => {
        #[derive(Args, Debug, Default)]
        struct KeyOverrides {
            $(
                #[doc = $help]
                #[arg(long = stringify!($field), value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl KeyOverrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

key_overrides! {
    l1 => "Domain length in x1 [1]",
    l2 => "Domain length in x2 [1]",
    n => "Intervals in both directions (sets n1 and n2)",
    n1 => "Intervals in x1 [32]",
    n2 => "Intervals in x2 [32]",
    tau => "Time step [0.05]",
    t_final => "Final time [0.5]",
    scheme => "monolithic or decomposed [monolithic]",
    nu => "Viscosity [1]",
    m => "Number of strips [2]",
    overlap => "Overlap width in nodes [2]",
    rel_tol => "CG relative tolerance [1e-10]",
    abs_tol => "CG absolute tolerance [1e-14]",
    max_iter => "CG iteration cap, 0 for 10 x unknowns [0]",
    out_dir => "Output directory [out]",
    snapshot_every => "Velocity snapshot interval in steps, 0 for final only [0]",
    forcing => "zero, manufactured or random [manufactured]",
    initial => "zero, manufactured or random [manufactured]",
    seed => "PRNG seed for random data [1]",
    taus => "Stability sweep step sizes [1e-3,1e-2,1e-1,1,10]",
    steps => "Stability sweep steps per tau [200]",
    grids => "Convergence sweep grid sizes [16,32,64]",
    conv_taus => "Convergence sweep step sizes [0.1,0.05,0.025,0.0125]",
    spatial_tau => "Step size of the spatial sweep [5e-4]",
    reference_factor => "Reference step is min(conv_taus)/factor [8]",
}

fn load(args: &CommonArgs) -> anyhow::Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        cfg.parse_str(&text)?;
    }
    for (k, v) in args.keys.pairs() {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, which) = match &cli.command {
        Command::Run(a) => (a, commands::Which::Run),
        Command::Converge(a) => (a, commands::Which::Converge),
        Command::Stability(a) => (a, commands::Which::Stability),
        Command::Verify(a) => (a, commands::Which::Verify),
    };
    let cfg = match load(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match commands::execute(which, &cfg) {
        Ok(commands::Outcome::Passed) => ExitCode::SUCCESS,
        Ok(commands::Outcome::MonitorFailed) => ExitCode::from(1),
        Err(commands::Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
