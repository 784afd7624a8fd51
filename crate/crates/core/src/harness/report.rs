use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::run::RunLog;
use super::scenario::MethodKind;

/// One aggregated row: runs sharing method, human count and horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: MethodKind,
    pub humans: usize,
    pub horizon: usize,
    pub runs: usize,
    pub collision_avoidance_pct: f64,
    pub goal_reached_pct: f64,
    /// Mean over runs that reached the goal (s).
    pub mean_time_to_goal_s: Option<f64>,
    pub mean_solver_ms: f64,
    pub mean_assembly_ms: f64,
    pub mean_total_ms: f64,
    pub softened_after_feasible: usize,
    pub emergency_steps: usize,
}

/// Aggregate run logs into one row per (method, humans, horizon).
pub fn summarize(logs: &[RunLog]) -> Result<Vec<SummaryRow>> {
    if logs.is_empty() {
        return Err(Error::Config("no runs to report".into()));
    }
    let mut groups: BTreeMap<(MethodKind, usize, usize), Vec<&RunLog>> = BTreeMap::new();
    for l in logs {
        groups.entry((l.header.method, l.header.humans, l.header.horizon)).or_default().push(l);
    }
    Ok(groups
        .into_iter()
        .map(|((method, humans, horizon), runs)| {
            let n = runs.len() as f64;
            let safe = runs.iter().filter(|r| r.metrics.collision_avoided).count() as f64;
            let times: Vec<f64> = runs.iter().filter_map(|r| r.metrics.time_to_goal).collect();
            let mean = |f: fn(&RunLog) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
            let solver = mean(|r| r.metrics.mean_solver_time_ms);
            let assembly = mean(|r| r.metrics.mean_assembly_time_ms);
            SummaryRow {
                method,
                humans,
                horizon,
                runs: runs.len(),
                collision_avoidance_pct: 100.0 * safe / n,
                goal_reached_pct: 100.0 * times.len() as f64 / n,
                mean_time_to_goal_s: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
                mean_solver_ms: solver,
                mean_assembly_ms: assembly,
                mean_total_ms: solver + assembly,
                softened_after_feasible: runs.iter().map(|r| r.metrics.softened_after_feasible).sum(),
                emergency_steps: runs.iter().map(|r| r.metrics.emergency_steps).sum(),
            }
        })
        .collect())
}

/// Every `*.jsonl` run log in `dir`, in file-name order.
pub fn load_runs(dir: impl AsRef<Path>) -> Result<Vec<RunLog>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(RunLog::read_jsonl).collect()
}

pub fn write_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let header = [
        "method", "humans", "T", "runs", "avoid %", "goal %", "ttg [s]", "solver [ms]", "assembly [ms]", "total [ms]",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.humans.to_string(),
                r.horizon.to_string(),
                r.runs.to_string(),
                format!("{:.0}", r.collision_avoidance_pct),
                format!("{:.0}", r.goal_reached_pct),
                r.mean_time_to_goal_s.map_or("-".into(), |t| format!("{t:.2}")),
                format!("{:.2}", r.mean_solver_ms),
                format!("{:.2}", r.mean_assembly_ms),
                format!("{:.2}", r.mean_total_ms),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{:<w$}", s, w = widths[c]) } else { format!("{:>w$}", s, w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut out, &header);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    out
}
