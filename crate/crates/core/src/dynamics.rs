//! Linear MAV model in the navigation frame.
//!
//! The translational and attitude dynamics are a second-order linear system in
//! the state `[x, y, z, vx, vy, vz, pitch, pitch_rate, roll, roll_rate]` driven
//! by `[thrust offset, pitch reference, roll reference]`. Yaw is kinematic and
//! never enters the matrices below.

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 10;
pub const INPUT_DIM: usize = 3;

pub const IDX_X: usize = 0;
pub const IDX_Y: usize = 1;
pub const IDX_Z: usize = 2;
pub const IDX_VX: usize = 3;
pub const IDX_VY: usize = 4;
pub const IDX_VZ: usize = 5;
pub const IDX_PITCH: usize = 6;
pub const IDX_PITCH_RATE: usize = 7;
pub const IDX_ROLL: usize = 8;
pub const IDX_ROLL_RATE: usize = 9;

/// Rows of the state vector holding the position.
pub const POSITION_ROWS: [usize; 3] = [IDX_X, IDX_Y, IDX_Z];

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Physical and sampling parameters of the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub g: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub c_z: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    #[serde(rename = "Ts")]
    pub ts: f64,
}

impl Default for ModelParams {
    /// Simulation parameters of the reference quadrotor.
    fn default() -> Self {
        Self {
            g: 9.81,
            c_x: 0.01,
            c_y: 0.01,
            c_z: 0.01,
            b1: 1.0,
            b2: 0.1,
            b3: 1.0,
            b4: 0.1,
            ts: 0.025,
        }
    }
}

impl ModelParams {
    /// Stiff attitude loop (natural frequency 5 rad/s, unit gain). The default
    /// parameters have a 6 s attitude period, too slow for a one-second horizon
    /// to regulate position in closed loop.
    pub fn agile() -> Self {
        Self { b1: 25.0, b2: 25.0, b3: 25.0, b4: 25.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.g, self.c_x, self.c_y, self.c_z, self.b1, self.b2, self.b3, self.b4, self.ts,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        if self.ts <= 0.0 {
            return Err(Error::InvalidParameter(format!("Ts must be positive, got {}", self.ts)));
        }
        if self.g < 0.0 || self.c_x < 0.0 || self.c_y < 0.0 || self.c_z < 0.0 {
            return Err(Error::InvalidParameter(
                "g and friction coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Continuous-time system matrices.
    pub fn continuous(&self) -> (StateMatrix, InputMatrix) {
        let mut a = StateMatrix::zeros();
        let mut b = InputMatrix::zeros();
        a[(IDX_X, IDX_VX)] = 1.0;
        a[(IDX_Y, IDX_VY)] = 1.0;
        a[(IDX_Z, IDX_VZ)] = 1.0;
        a[(IDX_VX, IDX_PITCH)] = self.g;
        a[(IDX_VX, IDX_VX)] = -self.c_x;
        a[(IDX_VY, IDX_ROLL)] = -self.g;
        a[(IDX_VY, IDX_VY)] = -self.c_y;
        a[(IDX_VZ, IDX_VZ)] = -self.c_z;
        b[(IDX_VZ, 0)] = 1.0;
        a[(IDX_PITCH, IDX_PITCH_RATE)] = 1.0;
        a[(IDX_PITCH_RATE, IDX_PITCH)] = -self.b1;
        b[(IDX_PITCH_RATE, 1)] = self.b2;
        a[(IDX_ROLL, IDX_ROLL_RATE)] = 1.0;
        a[(IDX_ROLL_RATE, IDX_ROLL)] = -self.b3;
        b[(IDX_ROLL_RATE, 2)] = self.b4;
        (a, b)
    }
}

/// Full vehicle state. Yaw is carried along but is not part of the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MavState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub theta: f64,
    pub theta_dot: f64,
    pub phi: f64,
    pub phi_dot: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl MavState {
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self { p, ..Default::default() }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_column_slice(&[
            self.p.x,
            self.p.y,
            self.p.z,
            self.v.x,
            self.v.y,
            self.v.z,
            self.theta,
            self.theta_dot,
            self.phi,
            self.phi_dot,
        ])
    }

    pub fn from_vector(x: &StateVector, yaw: f64) -> Self {
        Self {
            p: Vector3::new(x[IDX_X], x[IDX_Y], x[IDX_Z]),
            v: Vector3::new(x[IDX_VX], x[IDX_VY], x[IDX_VZ]),
            theta: x[IDX_PITCH],
            theta_dot: x[IDX_PITCH_RATE],
            phi: x[IDX_ROLL],
            phi_dot: x[IDX_ROLL_RATE],
            yaw,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite()) && self.yaw.is_finite()
    }
}

/// Thrust offset from hover (m/s^2) and attitude references (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub tau: f64,
    pub theta_r: f64,
    pub phi_r: f64,
}

impl ControlInput {
    pub const fn new(tau: f64, theta_r: f64, phi_r: f64) -> Self {
        Self { tau, theta_r, phi_r }
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.tau, self.theta_r, self.phi_r)
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self::new(u[0], u[1], u[2])
    }
}

/// Componentwise box on the control input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub min: ControlInput,
    pub max: ControlInput,
}

impl Default for ControlBounds {
    fn default() -> Self {
        let ang = 15f64.to_radians();
        Self {
            min: ControlInput::new(-0.5, -ang, -ang),
            max: ControlInput::new(0.25, ang, ang),
        }
    }
}

impl ControlBounds {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.min.to_vector(), self.max.to_vector());
        for i in 0..INPUT_DIM {
            if !lo[i].is_finite() || !hi[i].is_finite() || lo[i] > hi[i] {
                return Err(Error::InvalidParameter(format!(
                    "control bound {i} is invalid: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(())
    }

    /// Midpoint `u_c` of the box.
    pub fn center(&self) -> InputVector {
        0.5 * (self.max.to_vector() + self.min.to_vector())
    }

    /// Half-widths `e_u` of the box.
    pub fn half_range(&self) -> InputVector {
        0.5 * (self.max.to_vector() - self.min.to_vector())
    }

    pub fn clamp(&self, u: &InputVector) -> InputVector {
        let (lo, hi) = (self.min.to_vector(), self.max.to_vector());
        InputVector::from_fn(|i, _| u[i].clamp(lo[i], hi[i]))
    }

    pub fn contains(&self, u: &InputVector, tol: f64) -> bool {
        let (lo, hi) = (self.min.to_vector(), self.max.to_vector());
        (0..INPUT_DIM).all(|i| u[i] >= lo[i] - tol && u[i] <= hi[i] + tol)
    }

    /// The eight corners of the box.
    pub fn vertices(&self) -> [InputVector; 8] {
        let (lo, hi) = (self.min.to_vector(), self.max.to_vector());
        std::array::from_fn(|mask| {
            InputVector::from_fn(|i, _| if mask & (1 << i) != 0 { hi[i] } else { lo[i] })
        })
    }
}

/// Zero-order-hold discretization of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub ts: f64,
}

impl DiscreteModel {
    pub fn step(&self, x: &StateVector, u: &InputVector) -> StateVector {
        self.a * x + self.b * u
    }
}

/// Exact ZOH discretization via the exponential of the augmented matrix
/// `[[A, B], [0, 0]] * Ts`.
pub fn build_model(params: &ModelParams) -> Result<DiscreteModel> {
    params.validate()?;
    let (ac, bc) = params.continuous();
    const N: usize = STATE_DIM + INPUT_DIM;
    let mut aug = SMatrix::<f64, N, N>::zeros();
    aug.fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0).copy_from(&(ac * params.ts));
    aug.fixed_view_mut::<STATE_DIM, INPUT_DIM>(0, STATE_DIM).copy_from(&(bc * params.ts));
    let e = aug.exp();
    Ok(DiscreteModel {
        a: e.fixed_view::<STATE_DIM, STATE_DIM>(0, 0).into_owned(),
        b: e.fixed_view::<STATE_DIM, INPUT_DIM>(0, STATE_DIM).into_owned(),
        ts: params.ts,
    })
}

/// Infinite-horizon LQR cost-to-go `P` for diagonal weights, by fixed-point
/// iteration of the discrete Riccati equation.
pub fn lqr_cost_to_go(model: &DiscreteModel, q: &[f64; STATE_DIM], r: &[f64; INPUT_DIM]) -> Result<StateMatrix> {
    let q = StateMatrix::from_diagonal(&StateVector::from_column_slice(q));
    let r = SMatrix::<f64, INPUT_DIM, INPUT_DIM>::from_diagonal(&InputVector::from_column_slice(r));
    let (a, b) = (&model.a, &model.b);
    let mut p = q;
    for _ in 0..200_000 {
        let bp = b.transpose() * p;
        let s = (r + bp * b)
            .try_inverse()
            .ok_or_else(|| Error::Config("Riccati iteration hit a singular input weight".into()))?;
        let next = q + a.transpose() * p * a - a.transpose() * bp.transpose() * s * bp * a;
        let next = (next + next.transpose()) * 0.5;
        let done = (next - p).amax() <= 1e-10 * next.amax().max(1.0);
        p = next;
        if done {
            return Ok(p);
        }
    }
    Err(Error::Config("Riccati iteration did not converge".into()))
}

/// Prediction-form matrices `x = Phi x0 + Gamma u` over a horizon of `T` steps,
/// together with the powers they are built from.
#[derive(Debug, Clone)]
pub struct StackedDynamics {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub horizon: usize,
    /// `A^k` for `k = 0..=T`.
    a_pow: Vec<StateMatrix>,
    /// `A^j B` for `j = 0..T`.
    a_pow_b: Vec<InputMatrix>,
    pub model: DiscreteModel,
}

impl StackedDynamics {
    pub fn a_pow(&self, k: usize) -> &StateMatrix {
        &self.a_pow[k]
    }

    pub fn a_pow_b(&self, j: usize) -> &InputMatrix {
        &self.a_pow_b[j]
    }

    /// Stacked states `[x_1; ...; x_T]` for an input sequence `[u_0; ...; u_{T-1}]`.
    pub fn predict(&self, x0: &StateVector, u: &[f64]) -> Vec<StateVector> {
        let mut out = Vec::with_capacity(self.horizon);
        let mut x = *x0;
        for k in 0..self.horizon {
            let uk = InputVector::from_column_slice(&u[k * INPUT_DIM..(k + 1) * INPUT_DIM]);
            x = self.model.step(&x, &uk);
            out.push(x);
        }
        out
    }
}

pub fn stack(model: &DiscreteModel, horizon: usize) -> Result<StackedDynamics> {
    if horizon == 0 {
        return Err(Error::InvalidHorizon(horizon));
    }
    let mut a_pow = Vec::with_capacity(horizon + 1);
    a_pow.push(StateMatrix::identity());
    for k in 0..horizon {
        a_pow.push(model.a * a_pow[k]);
    }
    let a_pow_b: Vec<InputMatrix> = (0..horizon).map(|j| a_pow[j] * model.b).collect();

    let n = STATE_DIM;
    let m = INPUT_DIM;
    let mut phi = DMatrix::zeros(n * horizon, n);
    let mut gamma = DMatrix::zeros(n * horizon, m * horizon);
    for k in 0..horizon {
        phi.view_mut((k * n, 0), (n, n)).copy_from(&a_pow[k + 1]);
        for j in 0..=k {
            gamma.view_mut((k * n, j * m), (n, m)).copy_from(&a_pow_b[k - j]);
        }
    }
    Ok(StackedDynamics { phi, gamma, horizon, a_pow, a_pow_b, model: model.clone() })
}

/// Roll the model forward under a control sequence. Yaw is held.
pub fn propagate(model: &DiscreteModel, x0: &MavState, controls: &[ControlInput]) -> Vec<MavState> {
    let mut x = x0.to_vector();
    controls
        .iter()
        .map(|u| {
            x = model.step(&x, &u.to_vector());
            MavState::from_vector(&x, x0.yaw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lqr_cost_to_go_stabilizes() {
        let m = build_model(&ModelParams::agile()).unwrap();
        let q = [10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 0.1, 0.01, 0.1, 0.01];
        let r = [1.0; INPUT_DIM];
        let p = lqr_cost_to_go(&m, &q, &r).unwrap();
        let rm = SMatrix::<f64, INPUT_DIM, INPUT_DIM>::from_diagonal(&InputVector::from(r));
        let k = (rm + m.b.transpose() * p * m.b).try_inverse().unwrap() * m.b.transpose() * p * m.a;
        let residual = StateMatrix::from_diagonal(&StateVector::from(q)) + m.a.transpose() * p * (m.a - m.b * k) - p;
        assert!(residual.amax() < 1e-6 * p.amax());
        let closed = m.a - m.b * k;
        let rho = closed.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        assert!(rho < 1.0, "spectral radius {rho}");
    }

    /// Fixed-step RK4 over one sample with a constant input.
    fn rk4_step(params: &ModelParams, x: &StateVector, u: &InputVector, substeps: usize) -> StateVector {
        let (a, b) = params.continuous();
        let h = params.ts / substeps as f64;
        let f = |x: &StateVector| a * x + b * u;
        let mut x = *x;
        for _ in 0..substeps {
            let k1 = f(&x);
            let k2 = f(&(x + 0.5 * h * k1));
            let k3 = f(&(x + 0.5 * h * k2));
            let k4 = f(&(x + h * k3));
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn zero_coupling_is_double_integrator() {
        let params = ModelParams {
            g: 0.0,
            c_x: 0.0,
            c_y: 0.0,
            c_z: 0.0,
            b1: 0.0,
            b2: 0.0,
            b3: 0.0,
            b4: 0.0,
            ts: 0.025,
        };
        let m = build_model(&params).unwrap();
        let mut expected = StateMatrix::identity();
        expected[(IDX_X, IDX_VX)] = 0.025;
        expected[(IDX_Y, IDX_VY)] = 0.025;
        expected[(IDX_Z, IDX_VZ)] = 0.025;
        expected[(IDX_PITCH, IDX_PITCH_RATE)] = 0.025;
        expected[(IDX_ROLL, IDX_ROLL_RATE)] = 0.025;
        assert!((m.a - expected).amax() < 1e-15);
        let mut b = InputMatrix::zeros();
        b[(IDX_Z, 0)] = 0.5 * 0.025 * 0.025;
        b[(IDX_VZ, 0)] = 0.025;
        assert!((m.b - b).amax() < 1e-15);
    }

    #[test]
    fn matches_rk4_oracle() {
        let params = ModelParams::default();
        let m = build_model(&params).unwrap();
        // Columns of A and B from unit initial states / unit inputs.
        for i in 0..STATE_DIM {
            let x = StateVector::from_fn(|r, _| if r == i { 1.0 } else { 0.0 });
            let rk = rk4_step(&params, &x, &InputVector::zeros(), 1000);
            assert!((m.a.column(i) - rk).amax() <= 1e-9, "A column {i}");
        }
        for j in 0..INPUT_DIM {
            let u = InputVector::from_fn(|r, _| if r == j { 1.0 } else { 0.0 });
            let rk = rk4_step(&params, &StateVector::zeros(), &u, 1000);
            assert!((m.b.column(j) - rk).amax() <= 1e-9, "B column {j}");
        }
    }

    #[test]
    fn tiny_sample_time_is_identity() {
        let params = ModelParams { ts: 1e-12, ..Default::default() };
        let m = build_model(&params).unwrap();
        assert!((m.a - StateMatrix::identity()).amax() <= 1e-9);
        assert!(m.b.amax() <= 1e-9);
    }

    #[test]
    fn rejects_bad_params() {
        let p = ModelParams { g: f64::NAN, ..Default::default() };
        assert!(matches!(build_model(&p), Err(Error::InvalidParameter(_))));
        let p = ModelParams { ts: 0.0, ..Default::default() };
        assert!(build_model(&p).is_err());
    }

    #[test]
    fn axis_decoupling() {
        let m = build_model(&ModelParams::default()).unwrap();
        // x channel ignores roll, roll reference and thrust; y ignores pitch.
        for &r in &[IDX_X, IDX_VX] {
            assert_eq!(m.a[(r, IDX_ROLL)], 0.0);
            assert_eq!(m.a[(r, IDX_ROLL_RATE)], 0.0);
            assert_eq!(m.b[(r, 0)], 0.0);
            assert_eq!(m.b[(r, 2)], 0.0);
        }
        for &r in &[IDX_Y, IDX_VY] {
            assert_eq!(m.a[(r, IDX_PITCH)], 0.0);
            assert_eq!(m.a[(r, IDX_PITCH_RATE)], 0.0);
            assert_eq!(m.b[(r, 0)], 0.0);
            assert_eq!(m.b[(r, 1)], 0.0);
        }
    }

    #[test]
    fn stack_single_step() {
        let m = build_model(&ModelParams::default()).unwrap();
        let s = stack(&m, 1).unwrap();
        assert_eq!(s.phi, DMatrix::from_column_slice(10, 10, m.a.as_slice()));
        assert_eq!(s.gamma, DMatrix::from_column_slice(10, 3, m.b.as_slice()));
        assert!(matches!(stack(&m, 0), Err(Error::InvalidHorizon(0))));
    }

    #[test]
    fn stack_homogeneous_response() {
        let m = build_model(&ModelParams::default()).unwrap();
        let s = stack(&m, 3).unwrap();
        let x0 = StateVector::from_fn(|i, _| 0.1 * i as f64 - 0.3);
        let xs = &s.phi * DMatrix::from_column_slice(10, 1, x0.as_slice());
        let mut x = x0;
        for k in 0..3 {
            x = m.a * x;
            for i in 0..10 {
                assert!((xs[k * 10 + i] - x[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hover_is_equilibrium() {
        let params = ModelParams { c_x: 0.0, c_y: 0.0, c_z: 0.0, ..Default::default() };
        let m = build_model(&params).unwrap();
        let x0 = MavState::at_rest(Vector3::new(1.0, 2.0, 3.0));
        let traj = propagate(&m, &x0, &[ControlInput::default(); 50]);
        assert_eq!(traj.len(), 50);
        for s in traj {
            assert!((s.to_vector() - x0.to_vector()).amax() < 1e-15);
        }
    }

    #[test]
    fn thrust_moves_only_z() {
        let m = build_model(&ModelParams::default()).unwrap();
        let x0 = MavState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let traj = propagate(&m, &x0, &[ControlInput::new(0.25, 0.0, 0.0); 40]);
        let mut prev_vz = 0.0;
        for s in &traj {
            assert_eq!(s.p.x, 0.0);
            assert_eq!(s.p.y, 0.0);
            assert!(s.v.z > prev_vz);
            prev_vz = s.v.z;
        }
    }

    #[test]
    fn bounds_vertices_and_clamp() {
        let b = ControlBounds::default();
        let vs = b.vertices();
        assert_eq!(vs.len(), 8);
        assert!(vs.iter().all(|v| b.contains(v, 0.0)));
        let c = b.clamp(&InputVector::new(1.0, -1.0, 0.0));
        assert_eq!(c, InputVector::new(0.25, -15f64.to_radians(), 0.0));
        assert!((b.center()[0] + 0.125).abs() < 1e-15);
    }
}
