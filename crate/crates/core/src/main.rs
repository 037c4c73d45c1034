use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sixdma::benchmarks::SchemeKind;
use sixdma::harness::{emit_results, load_config, oracle_grid, run_sweep, OutputFormats, Sweep};
use sixdma::receiver::CombiningMode;

#[derive(Parser)]
#[command(name = "sixdma", version, about = "Rotatable-surface cell-free uplink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment or a sweep and write result files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        scheme: Option<SchemeKind>,
        #[arg(long)]
        mode: Option<CombiningMode>,
        /// `density_ratio=1,2,5,10` or `mean_users=5,10,...`
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Check a config and print it fully resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Brute-force grid search for tiny instances.
    OracleGrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
}

fn run(cli: Cli) -> sixdma::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            scheme,
            mode,
            sweep,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(scheme) = scheme {
                cfg.scheme = scheme;
                if let Some(s) = cfg.sweep.as_mut() {
                    s.schemes = vec![scheme];
                }
            }
            if let Some(mode) = mode {
                cfg.mode = mode;
                if let Some(s) = cfg.sweep.as_mut() {
                    s.modes = vec![mode];
                }
            }
            if let Some(spec) = sweep {
                let (schemes, modes) = match &cfg.sweep {
                    Some(s) => (s.schemes.clone(), s.modes.clone()),
                    None => (vec![cfg.scheme], vec![cfg.mode]),
                };
                cfg.sweep = Some(Sweep::parse_spec(&spec, schemes, modes)?);
            }
            cfg.validate()?;
            let outcome = run_sweep(&cfg)?;
            for f in &outcome.failures {
                eprintln!("run failed: {}: {}", f.label, f.error);
            }
            if outcome.records.is_empty() {
                return Err(sixdma::Error::Numerical("every run failed".into()));
            }
            emit_results(&outcome.records, &out, OutputFormats::default())?;
            print!("{}", sixdma::harness::summary_csv(&outcome.records));
            eprintln!("wrote results to {}", out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::OracleGrid { config, grid } => {
            let cfg = load_config(&config)?;
            let res = oracle_grid(&cfg, grid)?;
            let json = serde_json::to_string_pretty(&res).map_err(|e| sixdma::Error::Serialize(e.to_string()))?;
            println!("{json}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
