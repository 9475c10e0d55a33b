//! Run the toy experiment config and print the merged table.

use std::path::Path;

use gridnet::experiment::{emit_table, run_experiment, ExperimentConfig};

fn main() -> gridnet::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/toy.toml");
    let mut config = ExperimentConfig::load(&path)?;
    config.output.dir = std::env::temp_dir().join("gridnet-toy-runs");

    let outcome = run_experiment(&config)?;
    println!("run directory {}", outcome.dir.display());
    for row in emit_table(&config.output.dir)? {
        println!("{:<9} val {:.3} train {:.3} seed {}", row.strategy, row.val_acc, row.train_acc, row.seed);
    }
    Ok(())
}
