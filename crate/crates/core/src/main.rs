use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use humanmpc::harness::{
    format_table, gen_scenarios, load_runs, load_scenario, load_scenario_dir, run_batch, run_scenario, save_scenario,
    summarize, write_csv, Job, MethodKind, RunLog, RunOptions, ScenarioSpace,
};
use humanmpc::{Error, Result};

#[derive(Parser)]
#[command(name = "humanmpc", version, about = "Reachability-constrained MPC among humans: simulation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample crossing-walker scenarios into a directory.
    GenScenarios {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        humans: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON file overriding the sampling ranges and configuration.
        #[arg(long)]
        space: Option<PathBuf>,
    },
    /// Run one scenario closed loop.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Log every safety row instead of only dropped and binding ones.
        #[arg(long)]
        full_reports: bool,
    },
    /// Run every scenario in a directory with several methods.
    Batch {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ours")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        full_reports: bool,
    },
    /// Run every scenario at several horizon lengths.
    SweepHorizon {
        #[arg(long, default_value = "scen")]
        scenarios: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,20,40,60")]
        values: Vec<usize>,
        #[arg(long, default_value = "ours")]
        method: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Aggregate run logs into a summary table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_methods(names: &[String]) -> Result<Vec<MethodKind>> {
    names.iter().map(|s| s.trim().parse()).collect()
}

fn write_logs(logs: &[RunLog], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for log in logs {
        log.write_jsonl(out.join(log.file_name()))?;
        let m = &log.metrics;
        println!(
            "{} {} T={}: avoided={} min_dist={} ttg={} solve={:.2}ms",
            log.header.scenario,
            log.header.method,
            log.header.horizon,
            m.collision_avoided,
            m.min_joint_distance.map_or("-".into(), |d| format!("{d:.3}")),
            m.time_to_goal.map_or("-".into(), |t| format!("{t:.2}s")),
            m.mean_solver_time_ms + m.mean_assembly_time_ms,
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenarios { n, humans, seed, out, space } => {
            let mut sp: ScenarioSpace = match &space {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => ScenarioSpace::default(),
            };
            sp.humans = humans;
            let base = space.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
            let list = gen_scenarios(n, &sp, seed, base)?;
            std::fs::create_dir_all(&out)?;
            for sc in &list {
                save_scenario(sc, out.join(format!("{}.json", sc.name)))?;
            }
            println!("wrote {} scenarios to {}", list.len(), out.display());
        }
        Command::Simulate { scenario, method, horizon, out, full_reports } => {
            let sc = load_scenario(&scenario)?;
            let method = method.map(|m| m.parse()).transpose()?;
            let dir = scenario.parent().unwrap_or(Path::new("."));
            let log = run_scenario(&sc, dir, &RunOptions { method, horizon, full_reports })?;
            write_logs(&[log], &out)?;
        }
        Command::Batch { scenarios, methods, jobs, horizon, out, full_reports } => {
            let files = load_scenario_dir(&scenarios)?;
            let methods = parse_methods(&methods)?;
            let work: Vec<Job> = (0..files.len())
                .flat_map(|file| methods.iter().map(move |&method| Job { file, method, horizon }))
                .collect();
            let logs = run_batch(&files, &work, jobs, full_reports)?;
            write_logs(&logs, &out)?;
        }
        Command::SweepHorizon { scenarios, values, method, jobs, out } => {
            if values.iter().any(|&t| t == 0) {
                return Err(Error::InvalidHorizon(0));
            }
            let files = load_scenario_dir(&scenarios)?;
            let method: MethodKind = method.parse()?;
            let work: Vec<Job> = values
                .iter()
                .flat_map(|&t| (0..files.len()).map(move |file| Job { file, method, horizon: Some(t) }))
                .collect();
            let logs = run_batch(&files, &work, jobs, false)?;
            write_logs(&logs, &out)?;
        }
        Command::Report { runs, out } => {
            let logs = load_runs(&runs)?;
            let rows = summarize(&logs)?;
            write_csv(&rows, &out)?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::ScenarioSpace(_) => 3,
                Error::Parse { .. }
                | Error::Config(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::InvalidParameter(_)
                | Error::InvalidHorizon(_)
                | Error::Io(_) => 2,
                _ => 1,
            })
        }
    }
}
