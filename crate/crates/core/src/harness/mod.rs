//! Closed-loop evaluation: scenarios, baseline methods, simulation runs,
//! scenario generation and result tables.

pub mod gen;
pub mod methods;
pub mod report;
pub mod run;
pub mod scenario;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use gen::{gen_scenarios, PoolEntry, ScenarioSpace};
pub use methods::{method_constraints, MethodContext};
pub use report::{format_table, load_runs, summarize, write_csv, SummaryRow};
pub use run::{run_scenario, Metrics, RunLog, RunOptions, StepRecord, COLLISION_DISTANCE};
pub use scenario::{load_scenario, save_scenario, HumanSpec, MethodKind, ObservationConfig, Scenario, TrajectorySource};

/// A scenario file together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub dir: PathBuf,
}

/// Load every `*.json` scenario in `dir`, sorted by file name.
pub fn load_scenario_dir(dir: impl AsRef<Path>) -> Result<Vec<ScenarioFile>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no scenario files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| Ok(ScenarioFile { scenario: load_scenario(&p)?, dir: dir.to_path_buf() }))
        .collect()
}

/// One unit of batch work.
#[derive(Debug, Clone)]
pub struct Job {
    pub file: usize,
    pub method: MethodKind,
    pub horizon: Option<usize>,
}

/// Run `jobs` over `files` on `threads` workers. Results keep job order.
pub fn run_batch(files: &[ScenarioFile], jobs: &[Job], threads: usize, full_reports: bool) -> Result<Vec<RunLog>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let f = &files[j.file];
                let opts = RunOptions { method: Some(j.method), horizon: j.horizon, full_reports };
                run_scenario(&f.scenario, &f.dir, &opts)
            })
            .collect()
    })
}
