use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use meta_lqr::harness::{self, Algorithm, ExperimentConfig};
use meta_lqr::taskgen::GenSpec;
use meta_lqr::{Error, Gain, Result};

/// Meta-learning of LQR controllers over heterogeneous task sets.
///
/// Log verbosity is read from `META_LQR_LOG` (e.g. `info`, `debug`).
/// Exit codes: 0 success, 2 configuration error, 3 stability or guard
/// failure, 4 numerical failure.
#[derive(Parser)]
#[command(name = "meta-lqr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task set from a generation spec.
    GenerateTasks(Common),
    /// Model-based meta-learning.
    RunMb(Common),
    /// Model-free meta-learning with two-point estimates.
    RunMf(Common),
    /// Train on 80% of the tasks, fine-tune on the rest.
    Adapt(Common),
    /// Convergence at several heterogeneity levels.
    SweepHet(Common),
    /// Evaluate the step-size, heterogeneity and sample-count conditions.
    CheckTheory(Common),
}

#[derive(serde::Deserialize)]
struct GenerateConfig {
    #[serde(flatten)]
    spec: GenSpec,
    #[serde(default)]
    initial_gain: Option<Gain>,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    cfg.plot |= common.plot;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateTasks(c) => {
            let text = std::fs::read_to_string(&c.config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", c.config.display())))?;
            let gen: GenerateConfig = serde_json::from_str(&text)?;
            let bundle = harness::generate_tasks(&gen.spec, gen.initial_gain, &c.out)?;
            println!("wrote {} tasks to {}", bundle.tasks.len(), c.out.join("tasks.json").display());
        }
        Command::RunMb(c) => {
            let report = harness::run_convergence(&load(&c)?, Algorithm::ModelBased, &c.out)?;
            summarize_runs(&report.runs)?;
        }
        Command::RunMf(c) => {
            let report = harness::run_convergence(&load(&c)?, Algorithm::ModelFree, &c.out)?;
            summarize_runs(&report.runs)?;
        }
        Command::Adapt(c) => {
            let cfg = load(&c)?;
            let alg = cfg.algorithm.unwrap_or(Algorithm::ModelFree);
            let report = harness::run_adaptation(&cfg, alg, &c.out)?;
            println!(
                "median fine-tuning iterations: learned {} vs random {} over {} holdout tasks",
                report.median_learned,
                report.median_baseline,
                report.results.len()
            );
        }
        Command::SweepHet(c) => {
            let cfg = load(&c)?;
            let alg = cfg.algorithm.unwrap_or(Algorithm::ModelFree);
            let report = harness::run_het_sweep(&cfg, alg, &c.out)?;
            for (i, l) in report.levels.iter().enumerate() {
                println!("level {i} {:?}: median final task gap {:.6e}", l.levels, l.median_final_gap);
            }
            println!("ordered seeds: {}/{}", report.ordered_seeds, report.seeds);
        }
        Command::CheckTheory(c) => {
            let cfg = load(&c)?;
            let alg = cfg.algorithm.unwrap_or(Algorithm::ModelFree);
            let report = harness::run_check_theory(&cfg, alg, &c.out)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

/// Prints one line per seed; fails with the first guard stop, if any.
fn summarize_runs(runs: &[harness::RunOutcome]) -> Result<()> {
    for r in runs {
        match (&r.error, r.final_nominal_gap()) {
            (None, Some(g)) => println!("seed {}: final nominal gap {g:.6e}", r.seed),
            (Some(e), _) => println!("seed {}: stopped after {} iterations: {e}", r.seed, r.iterations),
            (None, None) => println!("seed {}: no iterations", r.seed),
        }
    }
    match runs.iter().find(|r| !r.completed) {
        Some(r) => Err(Error::Guard {
            iteration: r.iterations,
            reason: format!("seed {}: {}", r.seed, r.error.clone().unwrap_or_default()),
            record: Box::new(r.record.clone()),
        }),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("META_LQR_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
