use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fosls_twophase::io::{load_config_with, run_to_dir, summarize};
use fosls_twophase::nested_driver::Refinement;
use fosls_twophase::verify::run_suite;
use fosls_twophase::Error;

#[derive(Parser)]
#[command(name = "twophase", about = "Least-squares two-phase flow solver with nested iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Coalescence,
    Square,
    Manufactured,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write snapshots, energy.csv and report.txt.
    Run {
        config: PathBuf,
        /// Output directory (default: `out_dir` from the config, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, conflicts_with = "adaptive")]
        uniform: bool,
        #[arg(long)]
        adaptive: bool,
        /// Number of grids in the nested sequence.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Run the property checks with the parameters of a config.
    Verify { config: PathBuf },
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::NonConvergence { .. } | Error::MatrixNotSpd { .. } | Error::InvalidState(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config, out, preset, uniform, adaptive, levels } => {
            let preset = preset.map(|p| match p {
                Preset::Coalescence => "coalescence",
                Preset::Square => "square",
                Preset::Manufactured => "manufactured",
            });
            let mut cfg = match load_config_with(&config, preset) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if uniform {
                cfg.driver.refinement = Refinement::Uniform;
            }
            if adaptive {
                cfg.driver.refinement = Refinement::Adaptive;
            }
            if let Some(l) = levels {
                cfg.driver.levels = l;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            let out = out.or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            match run_to_dir(&cfg, &out) {
                Ok(sim) => {
                    let s = summarize(sim.log());
                    println!(
                        "{} steps, avg WU {:.2}, avg finest elements {:.1}, avg functional {:.4e}; outputs in {}",
                        s.steps,
                        s.avg_wu,
                        s.avg_finest_elements,
                        s.avg_functional,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::Verify { config } => {
            let cfg = match load_config_with(&config, None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run_suite(&cfg.params) {
                Ok(results) => {
                    for r in &results {
                        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                    }
                    if results.iter().all(|r| r.passed) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
    }
}
