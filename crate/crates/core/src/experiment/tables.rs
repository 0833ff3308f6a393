//! Summary tables and the CSV/markdown emitters.
//!
//! `results.csv` holds one row per (trial, damping, method) with a fixed
//! header; floats print through Rust's shortest round-trip formatting, so a
//! rerun with the same config is byte-identical. The two summary tables
//! mirror the benchmark layout: mean test MSE ± standard error of the mean
//! for each method, split by whether the sequential solver converged.

use crate::error::{Result, SsepError};

use super::sweep::TrialRecord;

/// One row of a summary table: both methods at one damping level.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub tau: f64,
    pub pcep_mean: f64,
    pub pcep_se: f64,
    pub rep_mean: f64,
    pub rep_se: f64,
    pub sets: usize,
}

#[derive(Debug, Clone)]
pub struct SummaryTables {
    /// Rows over trials where the sequential solver did not converge.
    pub not_converged: Vec<TableRow>,
    /// Rows over trials where it did.
    pub converged: Vec<TableRow>,
    pub rep_failures: usize,
    pub pcep_failures: usize,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Partitions records by sequential convergence and aggregates per damping
/// level, in grid order. Failed runs are counted and excluded.
pub fn summarize(records: &[TrialRecord], damping_grid: &[f64]) -> SummaryTables {
    let rep_failures = records.iter().filter(|r| r.rep_failed).count();
    let pcep_failures = records.iter().filter(|r| r.pcep_failed).count();
    let mut not_converged = Vec::with_capacity(damping_grid.len());
    let mut converged = Vec::with_capacity(damping_grid.len());
    for &tau in damping_grid {
        for (target, want_converged) in
            [(&mut not_converged, false), (&mut converged, true)]
        {
            let cell: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| {
                    r.damping == tau
                        && !r.rep_failed
                        && !r.pcep_failed
                        && r.rep_converged == want_converged
                })
                .collect();
            let rep: Vec<f64> = cell.iter().map(|r| r.mse_rep).collect();
            let pcep: Vec<f64> = cell.iter().map(|r| r.mse_pcep).collect();
            let (rep_mean, rep_se) = mean_and_se(&rep);
            let (pcep_mean, pcep_se) = mean_and_se(&pcep);
            target.push(TableRow {
                tau,
                pcep_mean,
                pcep_se,
                rep_mean,
                rep_se,
                sets: cell.len(),
            });
        }
    }
    SummaryTables {
        not_converged,
        converged,
        rep_failures,
        pcep_failures,
    }
}

const CSV_HEADER: &str = "trial_id,tau,method,converged,mse,iterations,final_energy";

/// Renders `results.csv`: header plus two rows (one per method) for every
/// (trial, damping) record, LF line endings.
pub fn render_records_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() * 2 + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},rep,{},{},{},{}\n",
            r.trial_id, r.damping, r.rep_converged, r.mse_rep, r.rep_iterations, r.final_energies.0
        ));
        out.push_str(&format!(
            "{},{},pcep,{},{},{},{}\n",
            r.trial_id,
            r.damping,
            r.pcep_converged,
            r.mse_pcep,
            r.pcep_outer_iterations,
            r.final_energies.1
        ));
    }
    out
}

/// Parses a `results.csv` produced by [`render_records_csv`] back into
/// records, pairing the two method rows of each (trial, damping) cell.
pub fn parse_records_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(SsepError::Config(format!(
                "unexpected results header: {other:?}"
            )))
        }
    }
    struct Row {
        trial_id: u64,
        tau: f64,
        method: String,
        converged: bool,
        mse: f64,
        iterations: usize,
        final_energy: f64,
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(SsepError::Config(format!(
                "row {}: expected 7 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| SsepError::Config(format!("row {}: bad {what}", idx + 2));
        rows.push(Row {
            trial_id: fields[0].parse().map_err(|_| parse_err("trial_id"))?,
            tau: fields[1].parse().map_err(|_| parse_err("tau"))?,
            method: fields[2].to_string(),
            converged: fields[3].parse().map_err(|_| parse_err("converged"))?,
            mse: fields[4].parse().map_err(|_| parse_err("mse"))?,
            iterations: fields[5].parse().map_err(|_| parse_err("iterations"))?,
            final_energy: fields[6].parse().map_err(|_| parse_err("final_energy"))?,
        });
    }

    let mut records = Vec::new();
    let mut pending: Option<Row> = None;
    for row in rows {
        match (&pending, row.method.as_str()) {
            (None, "rep") => pending = Some(row),
            (Some(rep), "pcep") => {
                if rep.trial_id != row.trial_id || rep.tau != row.tau {
                    return Err(SsepError::Config(
                        "rep/pcep rows are not paired by (trial, tau)".into(),
                    ));
                }
                records.push(TrialRecord {
                    trial_id: rep.trial_id,
                    damping: rep.tau,
                    rep_converged: rep.converged,
                    rep_failed: rep.mse.is_nan(),
                    mse_rep: rep.mse,
                    rep_iterations: rep.iterations,
                    pcep_converged: row.converged,
                    pcep_failed: row.mse.is_nan(),
                    mse_pcep: row.mse,
                    pcep_outer_iterations: row.iterations,
                    final_energies: (rep.final_energy, row.final_energy),
                });
                pending = None;
            }
            (_, m) => {
                return Err(SsepError::Config(format!(
                    "unexpected method ordering at `{m}`"
                )))
            }
        }
    }
    if pending.is_some() {
        return Err(SsepError::Config("dangling rep row at end of file".into()));
    }
    Ok(records)
}

fn fmt_cell(mean: f64, se: f64) -> String {
    if mean.is_nan() {
        "-".to_string()
    } else {
        format!("{mean:.3} ± {se:.3}")
    }
}

/// The two summary tables as markdown.
pub fn render_tables_markdown(tables: &SummaryTables) -> String {
    let mut out = String::new();
    for (title, rows) in [
        ("R-EP does not converge", &tables.not_converged),
        ("R-EP does converge", &tables.converged),
    ] {
        out.push_str(&format!("### {title}\n\n"));
        out.push_str("| PC-EP | R-EP | tau | # sets |\n");
        out.push_str("|---|---|---|---|\n");
        for row in rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                fmt_cell(row.pcep_mean, row.pcep_se),
                fmt_cell(row.rep_mean, row.rep_se),
                row.tau,
                row.sets
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "± is the standard error of the mean. Failed runs excluded: R-EP {}, PC-EP {}.\n",
        tables.rep_failures, tables.pcep_failures
    ));
    out
}

/// The two summary tables as CSV.
pub fn render_tables_csv(tables: &SummaryTables) -> String {
    let mut out = String::from("partition,tau,pcep_mean,pcep_se,rep_mean,rep_se,sets\n");
    for (name, rows) in [
        ("not_converged", &tables.not_converged),
        ("converged", &tables.converged),
    ] {
        for row in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                name, row.tau, row.pcep_mean, row.pcep_se, row.rep_mean, row.rep_se, row.sets
            ));
        }
    }
    out
}
