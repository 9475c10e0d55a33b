use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridnet::experiment::{emit_table, run_experiment, ExperimentConfig};
use gridnet::verify::{gradient_checks, invariant_checks, CheckResult};
use gridnet::Result;

#[derive(Parser)]
#[command(name = "gridnet", version, about = "Domain-decomposed CNN-DNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Overrides `train.seed` (and seeds the check suites).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `train.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overrides `train.deterministic`; a bare flag means true.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,

    /// Overrides `output.precision`.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,

    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every strategy in a TOML experiment config.
    Run { config: PathBuf },
    /// Merge the reports under a directory into table.csv and table.json.
    Table { dir: PathBuf },
    /// Decomposition, aggregation, equivalence and parameter-budget checks.
    Check,
    /// Finite-difference gradient checks for every layer type.
    Gradcheck {
        /// Number of random seeds per case.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn apply_overrides(cli: &Cli, config: &mut ExperimentConfig) {
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.train.workers = workers;
    }
    if let Some(d) = cli.deterministic {
        config.train.deterministic = d;
    }
    if let Some(p) = &cli.precision {
        config.output.precision = p.parse().expect("validated by clap");
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
}

fn report_checks(results: &[CheckResult]) -> bool {
    for r in results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    results.iter().all(|r| r.passed)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run { config } => {
            let mut config = ExperimentConfig::load(config)?;
            apply_overrides(cli, &mut config);
            let outcome = run_experiment(&config)?;
            for row in &outcome.report.rows {
                println!(
                    "{:<9} val {:.4}  train {:.4}  ({:.1}s)",
                    row.strategy,
                    row.val_acc,
                    row.train_acc,
                    outcome.manifest.strategy_wall_s.get(&row.strategy).copied().unwrap_or(0.0)
                );
            }
            if let Some(b) = outcome.report.bayes_val_acc {
                println!("bayes oracle val {b:.4}");
            }
            println!("wrote {}", outcome.dir.display());
            Ok(true)
        }
        Command::Table { dir } => {
            let rows = emit_table(dir)?;
            println!("{} rows written to {}", rows.len(), dir.join("table.csv").display());
            Ok(true)
        }
        Command::Check => Ok(report_checks(&invariant_checks(cli.seed.unwrap_or(0))?)),
        Command::Gradcheck { seeds } => Ok(report_checks(&gradient_checks(*seeds)?)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
