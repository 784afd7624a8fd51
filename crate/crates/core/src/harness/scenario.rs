use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, Mode};
use crate::dynamics::{MavState, ModelParams};
use crate::error::{Error, Result};
use crate::humans::{load_trajectory, synth_walk, ForecasterKind, JointTrajectory};
use crate::reach::{HumanReachParams, SkeletonMap};

/// Navigation method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Ours,
    None,
    ForwardRc,
    RcSimplified,
    RcComplex,
    Nav2d,
    DcStatic,
    DcConstVel,
    DcForecast,
}

impl MethodKind {
    pub const ALL: [MethodKind; 9] = [
        MethodKind::Ours,
        MethodKind::None,
        MethodKind::ForwardRc,
        MethodKind::RcSimplified,
        MethodKind::RcComplex,
        MethodKind::Nav2d,
        MethodKind::DcStatic,
        MethodKind::DcConstVel,
        MethodKind::DcForecast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Ours => "ours",
            MethodKind::None => "none",
            MethodKind::ForwardRc => "forward-rc",
            MethodKind::RcSimplified => "rc-simplified",
            MethodKind::RcComplex => "rc-complex",
            MethodKind::Nav2d => "nav2d",
            MethodKind::DcStatic => "dc-static",
            MethodKind::DcConstVel => "dc-const-vel",
            MethodKind::DcForecast => "dc-forecast",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Where a human's joint trajectory comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySource {
    Synthetic {
        speed: f64,
        seed: u64,
        /// Defaults to the scenario time limit plus one second.
        #[serde(default)]
        duration: Option<f64>,
        #[serde(default = "default_rate")]
        rate: f64,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_rate() -> f64 {
    40.0
}

/// One human: a trajectory in its local frame, rotated by `heading` about z
/// and translated by `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSpec {
    pub source: TrajectorySource,
    pub offset: [f64; 3],
    #[serde(default)]
    pub heading: f64,
}

/// Perception effects applied to the replayed joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    pub dropout_prob: f64,
    /// Seconds.
    pub latency: f64,
    pub forecaster: ForecasterKind,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { dropout_prob: 0.0, latency: 0.0, forecaster: ForecasterKind::default() }
    }
}

fn default_max_time() -> f64 {
    30.0
}

fn default_goal_tolerance() -> f64 {
    0.2
}

fn default_goal_speed() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub human_params: HumanReachParams,
    #[serde(default)]
    pub skeleton: SkeletonMap,
    pub humans: Vec<HumanSpec>,
    pub x0: MavState,
    pub goal: Option<[f64; 3]>,
    #[serde(default = "default_method")]
    pub method: MethodKind,
    #[serde(default)]
    pub observation: ObservationConfig,
    /// Standard deviation of i.i.d. Gaussian noise, clipped at three sigma,
    /// added to the plant state.
    #[serde(default)]
    pub disturbance_std: f64,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
    #[serde(default = "default_goal_speed")]
    pub goal_speed: f64,
}

fn default_method() -> MethodKind {
    MethodKind::Ours
}

impl Scenario {
    pub fn goal(&self) -> Option<Vector3<f64>> {
        self.goal.map(Vector3::from)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.controller.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.human_params.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.skeleton.validate().map_err(|e| Error::Config(e.to_string()))?;
        if (self.model.ts - self.controller.ts).abs() > 1e-12 {
            return Err(Error::Config("controller Ts must equal model Ts".into()));
        }
        if !self.x0.is_finite() {
            return Err(Error::Config("x0 is not finite".into()));
        }
        match (self.controller.mode, &self.goal) {
            (Mode::Setpoint, None) => return Err(Error::Config("setpoint mode needs a goal".into())),
            (Mode::VisualServo, _) if self.humans.is_empty() => {
                return Err(Error::Config("visual servoing needs a human".into()))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.observation.dropout_prob) || !(self.observation.latency >= 0.0) {
            return Err(Error::Config("dropout_prob must be in [0, 1] and latency >= 0".into()));
        }
        if !(self.max_time > 0.0) || !(self.disturbance_std >= 0.0) {
            return Err(Error::Config("max_time must be positive and disturbance_std >= 0".into()));
        }
        Ok(())
    }

    /// World-frame trajectories of every human. Relative CSV paths resolve
    /// against `base_dir`.
    pub fn human_trajectories(&self, base_dir: &Path) -> Result<Vec<JointTrajectory>> {
        self.humans
            .iter()
            .map(|h| {
                let local = match &h.source {
                    TrajectorySource::Synthetic { speed, seed, duration, rate } => synth_walk(
                        *speed,
                        0.0,
                        duration.unwrap_or(self.max_time + 1.0),
                        *rate,
                        *seed,
                        self.human_params.v_max,
                        self.human_params.a_max,
                    )
                    .map_err(|e| Error::Config(e.to_string()))?,
                    TrajectorySource::Csv { path } => {
                        let p = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                        load_trajectory(p)?
                    }
                };
                let offset = Vector3::from(h.offset);
                let frames = local.frames.iter().map(|f| f.transformed(h.heading, &offset)).collect();
                JointTrajectory::new(frames, local.rate)
            })
            .collect()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let sc: Scenario = serde_json::from_str(&text)?;
    sc.validate()?;
    Ok(sc)
}

pub fn save_scenario(sc: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(sc)?)?;
    Ok(())
}
