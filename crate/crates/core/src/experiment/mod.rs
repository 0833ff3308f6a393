//! Synthetic benchmark harness: seeded data generation, the damping sweep
//! comparing the sequential and double-loop solvers, and table/CSV emission.

mod config;
mod data;
mod sweep;
mod tables;

pub use config::ExperimentConfig;
pub use data::{evaluate_mse, generate_trial, TrialData};
pub use sweep::{run_sweep, SweepOutput, TrialRecord};
pub use tables::{
    parse_records_csv, render_records_csv, render_tables_csv, render_tables_markdown, summarize,
    SummaryTables, TableRow,
};
