//! Declarative experiments: TOML config in, report files and tables out.

mod config;
mod run;
mod table;

pub use config::{DatasetConfig, DatasetKind, ExperimentConfig, ModelConfig, OutputConfig, StrategiesConfig};
pub use run::{
    arch_label, run_experiment, Manifest, PhaseRecord, Report, ResultRow, RunOutcome, Timing, MANIFEST_FILE,
    REPORT_FILE,
};
pub use table::{emit_table, read_table_csv, TableRow, TABLE_HEADER};
