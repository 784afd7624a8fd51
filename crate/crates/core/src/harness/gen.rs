//! Randomized crossing-walker scenarios.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::PathBuf;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::dynamics::{MavState, ModelParams};
use crate::error::{Error, Result};
use crate::humans::{load_trajectory, standing_pose, HumanFrame};
use crate::reach::{complex_set, simplified_set, HumanObservation, HumanReachParams, SkeletonMap};

use super::scenario::{HumanSpec, MethodKind, ObservationConfig, Scenario, TrajectorySource};

/// Rejection-sampling budget per scenario.
pub const MAX_TRIES: usize = 10_000;

/// Trajectory pool entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolEntry {
    /// Synthetic walker with speed drawn from `walker_speed`.
    Synthetic,
    Csv { path: PathBuf },
}

/// Sampling ranges for generated scenarios. Each MAV flies from a random
/// start to a goal while walkers cross the straight line between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpace {
    pub humans: usize,
    pub goal_distance: [f64; 2],
    pub altitude: [f64; 2],
    pub walker_speed: [f64; 2],
    /// Time at which a walker reaches the MAV's straight path (s).
    pub crossing_time: [f64; 2],
    /// Position of the crossing along the path, as a fraction of its length.
    pub crossing_fraction: [f64; 2],
    /// Maximum deviation of the walking direction from perpendicular (rad).
    pub crossing_jitter: f64,
    pub pool: Vec<PoolEntry>,
    pub model: ModelParams,
    pub controller: ControllerConfig,
    pub human_params: HumanReachParams,
    pub observation: ObservationConfig,
    pub max_time: f64,
}

impl Default for ScenarioSpace {
    fn default() -> Self {
        Self {
            humans: 1,
            goal_distance: [4.0, 6.0],
            altitude: [1.0, 1.8],
            walker_speed: [0.5, 1.0],
            crossing_time: [0.5, 4.0],
            crossing_fraction: [0.3, 0.7],
            crossing_jitter: 0.4,
            pool: vec![PoolEntry::Synthetic],
            model: ModelParams::agile(),
            controller: ControllerConfig::default(),
            human_params: HumanReachParams::default(),
            observation: ObservationConfig::default(),
            max_time: 30.0,
        }
    }
}

fn range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] }
}

impl ScenarioSpace {
    fn validate(&self) -> Result<()> {
        if self.pool.is_empty() {
            return Err(Error::Config("trajectory pool is empty".into()));
        }
        let ranges = [self.goal_distance, self.altitude, self.walker_speed, self.crossing_time, self.crossing_fraction];
        if ranges.iter().any(|r| !(r[0] <= r[1]) || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("scenario ranges must be finite with min <= max".into()));
        }
        if self.walker_speed[0] < 0.0 || self.walker_speed[1] > self.human_params.v_max {
            return Err(Error::Config("walker speeds must lie in [0, v_max]".into()));
        }
        Ok(())
    }
}

/// Start and goal must clear the t = 0 skeleton and cylinder of every human.
fn clear_of(p: &Vector3<f64>, frames: &[HumanFrame], params: &HumanReachParams, skeleton: &SkeletonMap) -> bool {
    frames.iter().all(|f| {
        let obs = HumanObservation::conservative(f.clone(), params);
        let cyl = simplified_set(&obs, 0.0, params);
        let prims = complex_set(&obs, 0.0, skeleton, params).unwrap_or_default();
        cyl.signed_distance(p) > 0.0 && prims.iter().all(|pr| pr.signed_distance(p) > 0.0)
    })
}

/// `n` scenarios, deterministic in `seed`.
pub fn gen_scenarios(n: usize, space: &ScenarioSpace, seed: u64, base_dir: &std::path::Path) -> Result<Vec<Scenario>> {
    if n == 0 {
        return Err(Error::Config("need at least one scenario".into()));
    }
    space.validate()?;
    let skeleton = SkeletonMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(3);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_TRIES {
            let start = Vector3::new(0.0, 0.0, range(&mut rng, space.altitude));
            let bearing = rng.random_range(0.0..TAU);
            let dist = range(&mut rng, space.goal_distance);
            let dir = Vector3::new(bearing.cos(), bearing.sin(), 0.0);
            let goal = Vector3::new(start.x + dist * dir.x, start.y + dist * dir.y, range(&mut rng, space.altitude));
            let mut humans = Vec::with_capacity(space.humans);
            let mut first_frames = Vec::with_capacity(space.humans);
            for _ in 0..space.humans {
                let cross = start + dir * (dist * range(&mut rng, space.crossing_fraction));
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let heading = bearing + side * FRAC_PI_2 + rng.random_range(-1.0..=1.0) * space.crossing_jitter;
                let speed = range(&mut rng, space.walker_speed);
                let tc = range(&mut rng, space.crossing_time);
                let walk = Vector3::new(heading.cos(), heading.sin(), 0.0);
                let origin = Vector3::new(cross.x, cross.y, 0.0) - walk * (speed * tc);
                let entry = &space.pool[rng.random_range(0..space.pool.len())];
                let (source, local_first) = match entry {
                    PoolEntry::Synthetic => (
                        TrajectorySource::Synthetic { speed, seed: rng.random(), duration: None, rate: 40.0 },
                        HumanFrame::new(0.0, standing_pose()),
                    ),
                    PoolEntry::Csv { path } => {
                        let p = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                        let tr = load_trajectory(&p)?;
                        (TrajectorySource::Csv { path: path.clone() }, tr.frames[0].clone())
                    }
                };
                first_frames.push(local_first.transformed(heading, &origin));
                humans.push(HumanSpec { source, offset: origin.into(), heading });
            }
            if clear_of(&start, &first_frames, &space.human_params, &skeleton)
                && clear_of(&goal, &first_frames, &space.human_params, &skeleton)
            {
                accepted = Some(Scenario {
                    name: format!("{:0width$}", idx + 1),
                    seed: rng.random(),
                    model: space.model,
                    controller: ControllerConfig { ts: space.model.ts, ..space.controller.clone() },
                    human_params: space.human_params,
                    skeleton: skeleton.clone(),
                    humans,
                    x0: MavState::at_rest(start),
                    goal: Some(goal.into()),
                    method: MethodKind::Ours,
                    observation: space.observation.clone(),
                    disturbance_std: 0.0,
                    max_time: space.max_time,
                    goal_tolerance: 0.2,
                    goal_speed: 0.1,
                });
                break;
            }
        }
        match accepted {
            Some(sc) => out.push(sc),
            None => {
                return Err(Error::ScenarioSpace(format!(
                    "no admissible start/goal for scenario {} after {MAX_TRIES} tries",
                    idx + 1
                )))
            }
        }
    }
    Ok(out)
}
