//! Aggregate reports: CSV for machines, an aligned table for people.

use std::path::Path;

use anyhow::{bail, Result};
use helpnav_core::metrics::ReportRow;

use crate::files::write_atomic;

pub const CSV_HEADER: &str = "group,n,spl,success,human_contribution";

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        if r.group.contains([',', '"', '\n']) {
            bail!("group name {:?} cannot be written to CSV", r.group);
        }
        out.push_str(&format!("{},{},{},{},{}\n", r.group, r.n, r.spl, r.success, r.human_contribution));
    }
    Ok(out)
}

/// Parses a report written by [`to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        bail!("report must start with {CSV_HEADER:?}");
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                bail!("report row {l:?} has {} fields", f.len());
            }
            Ok(ReportRow {
                group: f[0].to_string(),
                n: f[1].parse()?,
                spl: f[2].parse()?,
                success: f[3].parse()?,
                human_contribution: f[4].parse()?,
            })
        })
        .collect()
}

/// Writes the whole report or nothing.
pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_atomic(path, to_csv(rows)?.as_bytes())
}

pub fn format_table(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.group.len()).max().unwrap_or(0).max("group".len());
    let mut out = format!(
        "{:<width$}  {:>5}  {:>7}  {:>7}  {:>18}\n",
        "group", "n", "spl", "success", "human_contribution"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>5}  {:>7.4}  {:>7.4}  {:>18.4}\n",
            r.group, r.n, r.spl, r.success, r.human_contribution
        ));
    }
    out
}
