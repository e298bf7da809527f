use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homog_core::harness::{
    run_effective, run_metric, run_property_suite, run_rate_sweep, Artifact,
};
use homog_core::{Config, Error};

/// Homogenization of periodic Hamilton-Jacobi equations via the metric problem.
#[derive(Parser)]
#[command(name = "homog", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the effective Lagrangian and Hamiltonian.
    Effective(Common),
    /// ε-sweep of sup |u^ε - ū| with rate fits.
    Rate(Common),
    /// Metric property suite.
    Properties(Common),
    /// Dump the metric table.
    Metric(Common),
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RESOLUTION: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Domain(_) => EXIT_CONFIG,
        Error::Resolution(_) => EXIT_RESOLUTION,
        Error::Property(_) => EXIT_PROPERTY,
        Error::Unreachable(_) | Error::Io(_) => EXIT_FAILURE,
    }
}

fn write_all(dir: &Path, arts: &[Artifact]) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    for a in arts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn run(cmd: &Command, c: &Common) -> Result<String, Error> {
    let cfg = Config::from_file(&c.config)?;
    match cmd {
        Command::Effective(_) => {
            let (model, arts) = run_effective(&cfg)?;
            write_all(&c.out, &arts)?;
            Ok(format!(
                "flat piece radius {:.4}",
                model.flat_piece_radius(1e-3)
            ))
        }
        Command::Rate(_) => {
            let (r, arts) = run_rate_sweep(&cfg)?;
            write_all(&c.out, &arts)?;
            let mut s = String::new();
            for (e, v) in &r.errors {
                s.push_str(&format!("eps {e:<10} error {v:.6e}\n"));
            }
            s.push_str(&format!(
                "beta {:.4}  prefactor {:.4}  residual {:.2e}",
                r.beta, r.prefactor, r.residual
            ));
            if let Some(p) = r.probe {
                s.push_str(&format!("  probe {p:.2e}"));
            }
            Ok(s)
        }
        Command::Properties(_) => {
            let (r, arts) = run_property_suite(&cfg)?;
            write_all(&c.out, &arts)?;
            let mut s = String::new();
            for ch in &r.checks {
                let status = if ch.informational {
                    "info"
                } else if ch.passed {
                    "pass"
                } else {
                    "FAIL"
                };
                s.push_str(&format!("{status:<5} {:<26} {:.6e}\n", ch.name, ch.value));
            }
            if r.passed() {
                Ok(s.trim_end().to_string())
            } else {
                print!("{s}");
                Err(Error::Property(r.failures().join(", ")))
            }
        }
        Command::Metric(_) => {
            let (table, arts) = run_metric(&cfg)?;
            write_all(&c.out, &arts)?;
            Ok(format!(
                "{} layers, {} MB",
                table.horizon_steps() + 1,
                table.memory_bytes() >> 20
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Effective(c) | Command::Rate(c) | Command::Properties(c) | Command::Metric(c) => c,
    };
    let level = if common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if common.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    match run(&cli.command, common) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
