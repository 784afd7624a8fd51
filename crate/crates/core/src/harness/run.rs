use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{setpoint_reference, servo_reference, Mode, Mpc, PlanResult};
use crate::dynamics::{build_model, MavState, StateVector, IDX_VX, IDX_X, STATE_DIM};
use crate::error::{Error, Result};
use crate::humans::{degrade, forecast, sample, Forecaster, HumanFrame};
use crate::qp::QpStatus;
use crate::reach::{complex_set, HumanObservation};
use crate::safety::{ConstraintRow, SafetyReport};

use super::methods::{configure, method_constraints, regime, MethodContext};
use super::scenario::{MethodKind, Scenario};

/// Minimum distance to any true joint below which a run counts as a collision (m).
pub const COLLISION_DISTANCE: f64 = 0.5;
/// Time constant of the yaw-rate tracking lag (s).
const YAW_LAG: f64 = 0.1;
/// Observation frames kept for speed estimation and forecasting.
const HISTORY_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario: String,
    pub method: MethodKind,
    pub horizon: usize,
    pub seed: u64,
    pub humans: usize,
}

/// Compact safety record: rows that were dropped or bind at the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyLog {
    pub feasible_under_bounds: bool,
    pub num_rows: usize,
    pub epsilon: f64,
    pub violated: Vec<ConstraintRow>,
    pub binding: Vec<ConstraintRow>,
    pub witness: Option<[f64; 3]>,
}

impl SafetyLog {
    fn from_report(report: &SafetyReport, u0: &[f64; 3]) -> Self {
        let u = nalgebra::Vector3::from(*u0);
        Self {
            feasible_under_bounds: report.feasible_under_bounds,
            num_rows: report.rows.len(),
            epsilon: report.epsilon,
            violated: report.violated_rows.iter().map(|&i| report.rows[i]).collect(),
            binding: report
                .retained_rows()
                .into_iter()
                .filter(|r| r.slack(&u) <= 1e-6)
                .collect(),
            witness: report.witness,
        }
    }
}

/// Either a compact or a full safety report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SafetyRecord {
    Full(SafetyReport),
    Compact(SafetyLog),
}

impl SafetyRecord {
    pub fn feasible_under_bounds(&self) -> bool {
        match self {
            SafetyRecord::Full(r) => r.feasible_under_bounds,
            SafetyRecord::Compact(r) => r.feasible_under_bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub state: [f64; STATE_DIM],
    pub yaw: f64,
    pub u0: [f64; 3],
    pub solver_status: QpStatus,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub assembly_time_ms: f64,
    pub softened: bool,
    pub emergency: bool,
    /// Distance from the MAV to the nearest true joint (m); absent without
    /// humans.
    pub min_joint_distance: Option<f64>,
    /// Signed distance from the MAV to the nearest observed skeleton
    /// primitive at zero lead time (m).
    pub min_primitive_distance: Option<f64>,
    pub safety: SafetyRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub collision_avoided: bool,
    pub min_joint_distance: Option<f64>,
    pub min_primitive_distance: Option<f64>,
    pub time_to_goal: Option<f64>,
    pub mean_solver_time_ms: f64,
    pub max_solver_time_ms: f64,
    pub mean_assembly_time_ms: f64,
    pub max_assembly_time_ms: f64,
    pub steps: usize,
    pub softened_steps: usize,
    pub first_step_feasible: bool,
    /// Softened steps in a run whose first step was feasible.
    pub softened_after_feasible: usize,
    pub emergency_steps: usize,
    pub final_time: f64,
}

impl Metrics {
    /// Aggregate from step records; recomputable from a saved log.
    pub fn from_steps(steps: &[StepRecord], time_to_goal: Option<f64>, final_time: f64) -> Self {
        let n = steps.len().max(1) as f64;
        let min_of = |f: fn(&StepRecord) -> Option<f64>| steps.iter().filter_map(f).reduce(f64::min);
        let min_joint = min_of(|s| s.min_joint_distance);
        let min_prim = min_of(|s| s.min_primitive_distance);
        let softened = steps.iter().filter(|s| s.softened).count();
        let first_ok = steps.first().is_some_and(|s| s.safety.feasible_under_bounds() && !s.softened);
        Self {
            collision_avoided: min_joint.is_none_or(|d| d >= COLLISION_DISTANCE),
            min_joint_distance: min_joint,
            min_primitive_distance: min_prim,
            time_to_goal,
            mean_solver_time_ms: steps.iter().map(|s| s.solve_time_ms).sum::<f64>() / n,
            max_solver_time_ms: steps.iter().map(|s| s.solve_time_ms).fold(0.0, f64::max),
            mean_assembly_time_ms: steps.iter().map(|s| s.assembly_time_ms).sum::<f64>() / n,
            max_assembly_time_ms: steps.iter().map(|s| s.assembly_time_ms).fold(0.0, f64::max),
            steps: steps.len(),
            softened_steps: softened,
            first_step_feasible: first_ok,
            softened_after_feasible: if first_ok { softened } else { 0 },
            emergency_steps: steps.iter().filter(|s| s.emergency).count(),
            final_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub steps: Vec<StepRecord>,
    pub metrics: Metrics,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(RunHeader),
    Step(Box<StepRecord>),
    Metrics(Metrics),
}

impl RunLog {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &LogLine::Header(self.header.clone()))?;
        writeln!(w)?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, &LogLine::Step(Box::new(s.clone())))?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &LogLine::Metrics(self.metrics.clone()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let (mut header, mut metrics, mut steps) = (None, None, Vec::new());
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            match parsed {
                LogLine::Header(h) => header = Some(h),
                LogLine::Step(s) => steps.push(*s),
                LogLine::Metrics(m) => metrics = Some(m),
            }
        }
        match (header, metrics) {
            (Some(header), Some(metrics)) => Ok(Self { header, steps, metrics }),
            _ => Err(Error::Parse { line: 0, msg: "run log lacks a header or metrics line".into() }),
        }
    }

    /// `<scenario>_<method>_T<horizon>.jsonl`.
    pub fn file_name(&self) -> String {
        format!("{}_{}_T{}.jsonl", self.header.scenario, self.header.method, self.header.horizon)
    }
}

/// Options that do not belong to the scenario itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub method: Option<MethodKind>,
    pub horizon: Option<usize>,
    /// Log every safety row instead of only dropped and binding ones.
    pub full_reports: bool,
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI { w - tau } else { w }
}

/// Closed-loop simulation of one scenario.
pub fn run_scenario(sc: &Scenario, base_dir: &Path, opts: &RunOptions) -> Result<RunLog> {
    sc.validate()?;
    let method = opts.method.unwrap_or(sc.method);
    let mut cfg = sc.controller.clone();
    if let Some(t) = opts.horizon {
        cfg.horizon = t;
    }
    configure(method, &mut cfg);
    let horizon = cfg.horizon;
    let mode = cfg.mode;
    let servo_distance = cfg.servo_distance;
    let yaw_gain = cfg.yaw_gain;
    let mut mpc = Mpc::new(cfg, &sc.model)
        .and_then(|m| m.with_humans(sc.human_params, sc.skeleton.clone(), regime(method)))
        .map_err(|e| Error::Config(e.to_string()))?;
    let model = build_model(&sc.model)?;
    let ts = sc.model.ts;
    let trajectories = sc.human_trajectories(base_dir)?;
    let forecaster = match method {
        MethodKind::DcConstVel => Forecaster::ConstantVelocity { history: 2 },
        MethodKind::DcStatic => Forecaster::Static,
        _ => Forecaster::from_kind(&sc.observation.forecaster)?,
    };
    let needs_forecast = mode == Mode::VisualServo || matches!(method, MethodKind::DcConstVel | MethodKind::DcForecast);
    let goal = sc.goal();
    let end_time = match mode {
        Mode::VisualServo => trajectories.iter().map(|t| t.end()).fold(sc.max_time, f64::min),
        Mode::Setpoint => sc.max_time,
    };
    let n_steps = (end_time / ts).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let noise = Normal::new(0.0, sc.disturbance_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut x: StateVector = sc.x0.to_vector();
    let mut yaw = sc.x0.yaw;
    let mut yaw_rate = 0.0;
    let mut histories: Vec<Vec<HumanFrame>> = vec![Vec::new(); trajectories.len()];
    let mut facing = None;
    let mut steps = Vec::with_capacity(n_steps);
    let mut time_to_goal = None;
    let latency = sc.observation.latency;
    let mut final_time = 0.0;

    for step in 0..=n_steps {
        let t = step as f64 * ts;
        final_time = t;
        let p = Vector3::new(x[IDX_X], x[IDX_X + 1], x[IDX_X + 2]);
        let truth: Vec<HumanFrame> = trajectories.iter().map(|tr| sample(tr, t).0).collect();
        let min_joint = truth.iter().map(|f| f.min_distance(&p)).reduce(f64::min);

        if let (Mode::Setpoint, Some(g)) = (mode, goal) {
            let v = Vector3::new(x[IDX_VX], x[IDX_VX + 1], x[IDX_VX + 2]);
            if (p - g).norm() < sc.goal_tolerance && v.norm() < sc.goal_speed {
                time_to_goal = Some(t);
                break;
            }
        }
        if step == n_steps {
            break;
        }

        let mut observations = Vec::with_capacity(trajectories.len());
        for (tr, hist) in trajectories.iter().zip(histories.iter_mut()) {
            let (captured, _) = sample(tr, t - latency);
            let captured = HumanFrame { t: t - latency, ..captured };
            let seen = degrade(&captured, hist.last(), sc.observation.dropout_prob, latency, &mut rng);
            hist.push(seen);
            if hist.len() > HISTORY_LEN {
                hist.remove(0);
            }
            observations.push(
                HumanObservation::from_history(hist, &sc.human_params).expect("history is non-empty"),
            );
        }
        let forecasts: Vec<Vec<HumanFrame>> = if needs_forecast {
            histories
                .iter()
                .map(|h| forecast(&forecaster, h, horizon, ts).map(|f| f.frames))
                .collect::<Result<_>>()?
        } else {
            vec![Vec::new(); histories.len()]
        };

        let reference = match mode {
            Mode::Setpoint => setpoint_reference(&goal.expect("validated"), horizon),
            Mode::VisualServo => {
                let (r, f) = servo_reference(&forecasts[0], servo_distance, horizon, facing)?;
                facing = Some(f);
                r
            }
        };

        let t_build = std::time::Instant::now();
        let ctx = MethodContext { mpc: &mpc, x0: &x, observations: &observations, forecasts: &forecasts };
        let safety = method_constraints(method, &ctx)?;
        let build_time = t_build.elapsed().as_secs_f64();
        let PlanResult { u0, solver_status, iterations, solve_time, assembly_time, softened, emergency, report, .. } =
            mpc.plan(&x, &reference, safety)?;

        let min_prim = observations
            .iter()
            .map(|o| {
                complex_set(o, 0.0, &sc.skeleton, &sc.human_params)
                    .map(|ps| ps.iter().map(|pr| pr.signed_distance(&p)).fold(f64::INFINITY, f64::min))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .reduce(f64::min);

        let u = [u0.tau, u0.theta_r, u0.phi_r];
        steps.push(StepRecord {
            step,
            time: t,
            state: std::array::from_fn(|i| x[i]),
            yaw,
            u0: u,
            solver_status,
            iterations,
            solve_time_ms: solve_time * 1e3,
            assembly_time_ms: (assembly_time + build_time) * 1e3,
            softened,
            emergency,
            min_joint_distance: min_joint,
            min_primitive_distance: min_prim,
            safety: if opts.full_reports {
                SafetyRecord::Full(report)
            } else {
                SafetyRecord::Compact(SafetyLog::from_report(&report, &u))
            },
        });

        // Yaw follows the bearing to the nearest human, else the goal.
        let target = truth
            .iter()
            .map(|f| f.root())
            .min_by(|a, b| (a - p).norm().total_cmp(&(b - p).norm()))
            .or(goal);
        let cmd = target.map_or(0.0, |q| {
            let d = q - p;
            if d.x.hypot(d.y) > 1e-6 { yaw_gain * wrap_angle(d.y.atan2(d.x) - yaw) } else { 0.0 }
        });
        yaw_rate += ts / YAW_LAG * (cmd - yaw_rate);
        yaw = wrap_angle(yaw + ts * yaw_rate);

        x = model.step(&x, &u0.to_vector());
        if sc.disturbance_std > 0.0 {
            for i in 0..STATE_DIM {
                let s = sc.disturbance_std;
                x[i] += noise.sample(&mut rng).clamp(-3.0 * s, 3.0 * s);
            }
        }
    }

    let metrics = Metrics::from_steps(&steps, time_to_goal, final_time);
    Ok(RunLog {
        header: RunHeader {
            scenario: sc.name.clone(),
            method,
            horizon,
            seed: sc.seed,
            humans: sc.humans.len(),
        },
        steps,
        metrics,
    })
}

/// Final MAV state of a run, reconstructed from the last step record.
pub fn final_state(log: &RunLog) -> Option<MavState> {
    log.steps.last().map(|s| MavState::from_vector(&StateVector::from(s.state), s.yaw))
}
