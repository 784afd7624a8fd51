//! Human joint trajectories: the 24-joint data model, CSV import/export,
//! replay interpolation, a synthetic walker, forecasters and observation
//! degradation (dropout and latency).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 24;

/// Canonical 24-joint indices (SMPL order, pelvis first).
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const L_COLLAR: usize = 13;
    pub const R_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
    pub const L_HAND: usize = 22;
    pub const R_HAND: usize = 23;
}

pub type Joints = [Vector3<f64>; NUM_JOINTS];

/// Neutral standing pose facing `+x` with the pelvis above the origin (z up).
pub fn standing_pose() -> Joints {
    let p = |x: f64, y: f64, z: f64| Vector3::new(x, y, z);
    [
        p(0.0, 0.0, 0.93),
        p(0.0, 0.09, 0.85),
        p(0.0, -0.09, 0.85),
        p(-0.01, 0.0, 1.05),
        p(0.01, 0.10, 0.48),
        p(0.01, -0.10, 0.48),
        p(-0.01, 0.0, 1.18),
        p(-0.02, 0.11, 0.08),
        p(-0.02, -0.11, 0.08),
        p(0.0, 0.0, 1.24),
        p(0.10, 0.12, 0.02),
        p(0.10, -0.12, 0.02),
        p(0.0, 0.0, 1.45),
        p(0.0, 0.08, 1.38),
        p(0.0, -0.08, 1.38),
        p(0.03, 0.0, 1.62),
        p(0.0, 0.18, 1.40),
        p(0.0, -0.18, 1.40),
        p(0.0, 0.20, 1.12),
        p(0.0, -0.20, 1.12),
        p(0.02, 0.21, 0.87),
        p(0.02, -0.21, 0.87),
        p(0.03, 0.21, 0.79),
        p(0.03, -0.21, 0.79),
    ]
}

/// Timestamped joint positions with per-joint observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanFrame {
    pub t: f64,
    pub joints: Joints,
    pub observed_at: [f64; NUM_JOINTS],
}

impl HumanFrame {
    /// Frame with every joint observed at `t`.
    pub fn new(t: f64, joints: Joints) -> Self {
        Self { t, joints, observed_at: [t; NUM_JOINTS] }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.joints.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn root(&self) -> Vector3<f64> {
        self.joints[joint::PELVIS]
    }

    /// Rigid transform: rotate about the world z axis by `heading`, then
    /// translate by `offset`.
    pub fn transformed(&self, heading: f64, offset: &Vector3<f64>) -> Self {
        let (s, c) = heading.sin_cos();
        let mut out = self.clone();
        for p in out.joints.iter_mut() {
            *p = Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z) + offset;
        }
        out
    }

    /// Horizontal facing direction from the shoulder line crossed with up.
    pub fn facing(&self) -> Option<Vector3<f64>> {
        let across = self.joints[joint::L_SHOULDER] - self.joints[joint::R_SHOULDER];
        let f = across.cross(&Vector3::z());
        let n = f.norm();
        (n > 1e-9).then(|| f / n)
    }

    pub fn min_distance(&self, q: &Vector3<f64>) -> f64 {
        self.joints.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Time-ordered joint frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub frames: Vec<HumanFrame>,
    pub rate: f64,
}

impl JointTrajectory {
    pub fn new(frames: Vec<HumanFrame>, rate: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Config("trajectory has no frames".into()));
        }
        if !(rate > 0.0) {
            return Err(Error::Config(format!("trajectory rate must be positive, got {rate}")));
        }
        if frames.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Config("trajectory timestamps must be strictly increasing".into()));
        }
        Ok(Self { frames, rate })
    }

    pub fn start(&self) -> f64 {
        self.frames[0].t
    }

    pub fn end(&self) -> f64 {
        self.frames[self.frames.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    frame: usize,
    time: f64,
    joint: usize,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct ForecastRow {
    frame: usize,
    time: f64,
    joint: usize,
    x: f64,
    y: f64,
    z: f64,
    lead_step: usize,
}

type FrameAccumulator = (f64, [Option<Vector3<f64>>; NUM_JOINTS]);

fn accumulate(
    map: &mut BTreeMap<usize, FrameAccumulator>,
    line: usize,
    frame: usize,
    time: f64,
    joint: usize,
    p: Vector3<f64>,
) -> Result<()> {
    if joint >= NUM_JOINTS {
        return Err(Error::Parse { line, msg: format!("joint id {joint} out of range 0..23") });
    }
    if !time.is_finite() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse { line, msg: "non-finite value".into() });
    }
    let entry = map.entry(frame).or_insert((time, [None; NUM_JOINTS]));
    if (entry.0 - time).abs() > 1e-9 {
        return Err(Error::Parse { line, msg: format!("frame {frame} has inconsistent timestamps") });
    }
    if entry.1[joint].replace(p).is_some() {
        return Err(Error::Parse { line, msg: format!("frame {frame} repeats joint {joint}") });
    }
    Ok(())
}

fn finish_frame(frame: usize, time: f64, joints: &[Option<Vector3<f64>>; NUM_JOINTS], line: usize) -> Result<HumanFrame> {
    let mut out = [Vector3::zeros(); NUM_JOINTS];
    for (j, p) in joints.iter().enumerate() {
        out[j] = p.ok_or_else(|| Error::Parse {
            line,
            msg: format!("frame {frame} is missing joint {j}"),
        })?;
    }
    Ok(HumanFrame::new(time, out))
}

fn row_line(pos: Option<&csv::Position>) -> usize {
    pos.map_or(0, |p| p.line() as usize)
}

/// Load a `frame,time,joint,x,y,z` CSV. Rows within a frame may come in any
/// order.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<JointTrajectory> {
    let mut rdr = csv::Reader::from_path(path)?;
    read_trajectory(&mut rdr)
}

pub fn parse_trajectory(text: &str) -> Result<JointTrajectory> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    read_trajectory(&mut rdr)
}

fn read_trajectory<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<JointTrajectory> {
    let mut map = BTreeMap::new();
    let mut last_line = 1;
    for rec in rdr.deserialize::<CsvRow>() {
        let row = rec.map_err(|e| Error::Parse { line: row_line(e.position()), msg: e.to_string() })?;
        let line = last_line + 1;
        last_line = line;
        accumulate(&mut map, line, row.frame, row.time, row.joint, Vector3::new(row.x, row.y, row.z))?;
    }
    let frames = map
        .iter()
        .map(|(&f, (t, joints))| finish_frame(f, *t, joints, last_line))
        .collect::<Result<Vec<_>>>()?;
    if frames.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Parse { line: last_line, msg: "frame timestamps must increase with frame index".into() });
    }
    let rate = if frames.len() >= 2 {
        (frames.len() - 1) as f64 / (frames[frames.len() - 1].t - frames[0].t)
    } else {
        1.0
    };
    JointTrajectory::new(frames, rate)
}

pub fn write_trajectory(traj: &JointTrajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, f) in traj.frames.iter().enumerate() {
        for (j, p) in f.joints.iter().enumerate() {
            w.serialize(CsvRow { frame: i, time: f.t, joint: j, x: p.x, y: p.y, z: p.z })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Linear interpolation at time `t`. Outside the recorded range the nearest
/// endpoint is returned and the flag is set.
pub fn sample(traj: &JointTrajectory, t: f64) -> (HumanFrame, bool) {
    let frames = &traj.frames;
    if t <= traj.start() {
        let clamped = t < traj.start();
        let mut f = frames[0].clone();
        if clamped {
            f.t = t;
            f.observed_at = [t; NUM_JOINTS];
        }
        return (f, clamped);
    }
    if t >= traj.end() {
        let clamped = t > traj.end();
        let mut f = frames[frames.len() - 1].clone();
        if clamped {
            f.t = t;
            f.observed_at = [t; NUM_JOINTS];
        }
        return (f, clamped);
    }
    let hi = frames.partition_point(|f| f.t <= t);
    let (f0, f1) = (&frames[hi - 1], &frames[hi]);
    if f0.t == t {
        return (f0.clone(), false);
    }
    let s = (t - f0.t) / (f1.t - f0.t);
    let joints = std::array::from_fn(|j| f0.joints[j] + (f1.joints[j] - f0.joints[j]) * s);
    (HumanFrame::new(t, joints), false)
}

/// Gait angular frequency of the synthetic walker (rad/s).
const GAIT_OMEGA: f64 = 3.0;

/// Relative swing amplitude per joint along the walking direction; the sign
/// encodes the phase (legs opposite each other, arms opposite the legs).
fn swing_weight(j: usize) -> f64 {
    use joint::*;
    match j {
        L_HIP => 0.2,
        R_HIP => -0.2,
        L_KNEE => 0.5,
        R_KNEE => -0.5,
        L_ANKLE | L_FOOT => 1.0,
        R_ANKLE | R_FOOT => -1.0,
        L_ELBOW => -0.3,
        R_ELBOW => 0.3,
        L_WRIST | L_HAND => -0.6,
        R_WRIST | R_HAND => 0.6,
        _ => 0.0,
    }
}

/// Kinematic walker: the root moves at constant `speed` along `heading` from
/// the origin while limbs swing sinusoidally. Joint speeds stay within
/// `v_max` and accelerations within `a_max`.
pub fn synth_walk(
    speed: f64,
    heading: f64,
    duration: f64,
    rate: f64,
    seed: u64,
    v_max: f64,
    a_max: f64,
) -> Result<JointTrajectory> {
    if !(speed >= 0.0) || speed > v_max {
        return Err(Error::InvalidParameter(format!("walker speed {speed} outside [0, {v_max}]")));
    }
    if !(duration >= 0.0) || !(rate > 0.0) {
        return Err(Error::InvalidParameter("duration must be >= 0 and rate > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let scale: f64 = rng.random_range(0.95..1.05);
    let amp = (0.9 * (v_max - speed) / GAIT_OMEGA).min(0.9 * a_max / (GAIT_OMEGA * GAIT_OMEGA));
    let base = standing_pose().map(|p| Vector3::new(p.x, p.y, p.z * scale));
    let dir = Vector3::new(heading.cos(), heading.sin(), 0.0);
    let n = (duration * rate).round() as usize;
    let frames = (0..=n)
        .map(|i| {
            let t = i as f64 / rate;
            let swing = amp * (GAIT_OMEGA * t + phase0).sin();
            let local: Joints = std::array::from_fn(|j| base[j] + Vector3::x() * (swing_weight(j) * swing));
            HumanFrame::new(t, local).transformed(heading, &(dir * (speed * t)))
        })
        .collect();
    JointTrajectory::new(frames, rate)
}

/// Forecaster selection as stored in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterKind {
    Static,
    ConstantVelocity {
        #[serde(default = "default_history")]
        history: usize,
    },
    External {
        file: PathBuf,
    },
}

fn default_history() -> usize {
    10
}

impl Default for ForecasterKind {
    fn default() -> Self {
        ForecasterKind::ConstantVelocity { history: default_history() }
    }
}

/// Precomputed forecasts keyed by issue time; `leads[k - 1]` holds lead step `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastTable {
    origins: Vec<(f64, Vec<Joints>)>,
}

impl ForecastTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        Self::read(&mut rdr)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        Self::read(&mut rdr)
    }

    fn read<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let mut by_origin: BTreeMap<usize, BTreeMap<usize, FrameAccumulator>> = BTreeMap::new();
        let mut line = 1;
        for rec in rdr.deserialize::<ForecastRow>() {
            let row = rec.map_err(|e| Error::Parse { line: row_line(e.position()), msg: e.to_string() })?;
            line += 1;
            if row.lead_step == 0 {
                return Err(Error::Parse { line, msg: "lead_step starts at 1".into() });
            }
            let leads = by_origin.entry(row.frame).or_default();
            accumulate(leads, line, row.lead_step, row.time, row.joint, Vector3::new(row.x, row.y, row.z))?;
        }
        let mut origins = Vec::new();
        for (frame, leads) in by_origin {
            let mut joints = Vec::new();
            let mut time = f64::NAN;
            for (expected, (&lead, (t, acc))) in (1..).zip(leads.iter()) {
                if lead != expected {
                    return Err(Error::Parse { line, msg: format!("origin frame {frame} skips lead step {expected}") });
                }
                time = *t;
                joints.push(finish_frame(frame, *t, acc, line)?.joints);
            }
            origins.push((time, joints));
        }
        origins.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { origins })
    }

    /// Forecast issued at the latest origin not after `t`.
    fn lookup(&self, t: f64) -> Option<&[Joints]> {
        let idx = self.origins.partition_point(|(ot, _)| *ot <= t + 1e-9);
        (idx > 0).then(|| self.origins[idx - 1].1.as_slice())
    }
}

/// Runtime forecaster with any external table loaded.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecaster {
    Static,
    ConstantVelocity { history: usize },
    External(ForecastTable),
}

impl Forecaster {
    pub fn from_kind(kind: &ForecasterKind) -> Result<Self> {
        Ok(match kind {
            ForecasterKind::Static => Forecaster::Static,
            ForecasterKind::ConstantVelocity { history } => {
                if *history < 2 {
                    return Err(Error::Config("constant-velocity history must be >= 2".into()));
                }
                Forecaster::ConstantVelocity { history: *history }
            }
            ForecasterKind::External { file } => Forecaster::External(ForecastTable::load(file)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Predicted frames for lead steps `1..=T`.
    pub frames: Vec<HumanFrame>,
    /// Set when the requested model could not run and a static forecast was
    /// returned instead.
    pub fell_back: bool,
}

fn static_forecast(last: &HumanFrame, horizon: usize, ts: f64, fell_back: bool) -> Forecast {
    let frames = (1..=horizon)
        .map(|k| HumanFrame { t: last.t + k as f64 * ts, ..last.clone() })
        .collect();
    Forecast { frames, fell_back }
}

/// Predict `horizon` future frames spaced `ts` apart from an observation
/// history (oldest first).
pub fn forecast(kind: &Forecaster, history: &[HumanFrame], horizon: usize, ts: f64) -> Result<Forecast> {
    let last = history
        .last()
        .ok_or_else(|| Error::InvalidParameter("forecast needs at least one frame".into()))?;
    match kind {
        Forecaster::Static => Ok(static_forecast(last, horizon, ts, false)),
        Forecaster::ConstantVelocity { history: window } => {
            let start = history.len().saturating_sub(*window);
            let win = &history[start..];
            if win.len() < 2 {
                return Ok(static_forecast(last, horizon, ts, true));
            }
            // Per-joint least-squares line through the window.
            let t_mean = win.iter().map(|f| f.t).sum::<f64>() / win.len() as f64;
            let s_tt: f64 = win.iter().map(|f| (f.t - t_mean).powi(2)).sum();
            if s_tt <= 0.0 {
                return Ok(static_forecast(last, horizon, ts, true));
            }
            let mut mean = [Vector3::zeros(); NUM_JOINTS];
            let mut slope = [Vector3::zeros(); NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                let p_mean = win.iter().map(|f| f.joints[j]).sum::<Vector3<f64>>() / win.len() as f64;
                let s_tp: Vector3<f64> = win.iter().map(|f| (f.joints[j] - p_mean) * (f.t - t_mean)).sum();
                mean[j] = p_mean;
                slope[j] = s_tp / s_tt;
            }
            let frames = (1..=horizon)
                .map(|k| {
                    let t = last.t + k as f64 * ts;
                    let joints = std::array::from_fn(|j| mean[j] + slope[j] * (t - t_mean));
                    HumanFrame { t, joints, observed_at: last.observed_at }
                })
                .collect();
            Ok(Forecast { frames, fell_back: false })
        }
        Forecaster::External(table) => match table.lookup(last.t) {
            Some(leads) if !leads.is_empty() => {
                let frames = (1..=horizon)
                    .map(|k| HumanFrame {
                        t: last.t + k as f64 * ts,
                        joints: leads[(k - 1).min(leads.len() - 1)],
                        observed_at: last.observed_at,
                    })
                    .collect();
                Ok(Forecast { frames, fell_back: false })
            }
            _ => Ok(static_forecast(last, horizon, ts, true)),
        },
    }
}

/// Observation effects applied to a frame captured at `frame.t`: each joint
/// is dropped with probability `dropout_prob` (keeping its previous position
/// and observation time) and the frame is delivered `latency` seconds late.
pub fn degrade<R: Rng + ?Sized>(
    frame: &HumanFrame,
    previous: Option<&HumanFrame>,
    dropout_prob: f64,
    latency: f64,
    rng: &mut R,
) -> HumanFrame {
    let mut out = frame.clone();
    for j in 0..NUM_JOINTS {
        let drop = dropout_prob > 0.0 && rng.random::<f64>() < dropout_prob;
        if let (true, Some(prev)) = (drop, previous) {
            out.joints[j] = prev.joints[j];
            out.observed_at[j] = prev.observed_at[j];
        }
    }
    out.t = frame.t + latency;
    out
}
