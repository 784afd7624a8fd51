//! Condensed linear MPC with box constraints and first-input safety rows.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_model, lqr_cost_to_go, stack, ControlBounds, ControlInput, InputVector, ModelParams, StackedDynamics, StateMatrix, StateVector,
    IDX_PITCH, IDX_ROLL, IDX_VX, IDX_VY, IDX_VZ, IDX_X, IDX_Z, INPUT_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::humans::{joint, HumanFrame};
use crate::qp::{DenseQpSolver, QpStatus, QuadraticProgram};
use crate::reach::{hybrid_set, HumanObservation, HumanReachParams, MavReach, SetRegime, SkeletonMap};
use crate::safety::{build_rows, build_rows_at, build_rows_guided, check_feasible, prune, soften, ConstraintRow, SafetyReport, PRUNE_SLACK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Setpoint,
    VisualServo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub q: [f64; STATE_DIM],
    /// Diagonal terminal weight; `null` uses the LQR cost-to-go of `q` and `r`.
    pub q_terminal: Option<[f64; STATE_DIM]>,
    pub r: [f64; INPUT_DIM],
    pub lambda: f64,
    pub u_min: ControlInput,
    pub u_max: ControlInput,
    /// Per-state lower/upper limits; `null` leaves a state unbounded.
    pub x_min: [Option<f64>; STATE_DIM],
    pub x_max: [Option<f64>; STATE_DIM],
    pub epsilon: f64,
    pub mode: Mode,
    pub servo_distance: f64,
    /// Proportional gain of the yaw-rate command (1/s).
    pub yaw_gain: f64,
    pub tol_kkt: f64,
    pub max_iter: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let q = [10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 0.1, 0.01, 0.1, 0.01];
        let ang = 15f64.to_radians();
        let bounds = ControlBounds::default();
        let mut x_min = [None; STATE_DIM];
        let mut x_max = [None; STATE_DIM];
        for i in [IDX_VX, IDX_VY, IDX_VZ] {
            x_min[i] = Some(-3.0);
            x_max[i] = Some(3.0);
        }
        x_min[IDX_Z] = Some(0.2);
        for i in [IDX_PITCH, IDX_ROLL] {
            x_min[i] = Some(-ang);
            x_max[i] = Some(ang);
        }
        Self {
            horizon: 40,
            ts: 0.025,
            q,
            q_terminal: Some(q.map(|v| 5.0 * v)),
            r: [1.0; INPUT_DIM],
            lambda: 1000.0,
            u_min: bounds.min,
            u_max: bounds.max,
            x_min,
            x_max,
            epsilon: crate::safety::DEFAULT_EPSILON,
            mode: Mode::Setpoint,
            servo_distance: 3.0,
            yaw_gain: 2.0,
            tol_kkt: crate::qp::DEFAULT_TOL_KKT,
            max_iter: crate::qp::DEFAULT_MAX_ITER,
        }
    }
}

impl ControllerConfig {
    pub fn bounds(&self) -> ControlBounds {
        ControlBounds { min: self.u_min, max: self.u_max }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon(0));
        }
        if !(self.ts > 0.0) {
            return Err(Error::Config(format!("controller Ts must be positive, got {}", self.ts)));
        }
        let weights = self.q.iter().chain(self.q_terminal.iter().flatten()).chain(&self.r).chain([&self.lambda]);
        if weights.into_iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("weights must be finite and non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.servo_distance >= 0.0) {
            return Err(Error::Config("servo_distance must be non-negative".into()));
        }
        self.bounds().validate()?;
        for i in 0..STATE_DIM {
            if let (Some(lo), Some(hi)) = (self.x_min[i], self.x_max[i]) {
                if lo > hi {
                    return Err(Error::Config(format!("state bound {i} has min > max")));
                }
            }
        }
        Ok(())
    }
}

/// Stacked reference states `[x̂_1; ...; x̂_T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x_hat: Vec<StateVector>,
}

impl Reference {
    pub fn len(&self) -> usize {
        self.x_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_hat.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.x_hat.iter().all(|x| x.iter().all(|v| v.is_finite()))
    }
}

fn position_target(p: &Vector3<f64>) -> StateVector {
    let mut x = StateVector::zeros();
    x.fixed_rows_mut::<3>(IDX_X).copy_from(p);
    x
}

/// Constant hover-at-goal reference.
pub fn setpoint_reference(goal: &Vector3<f64>, horizon: usize) -> Reference {
    Reference { x_hat: vec![position_target(goal); horizon] }
}

/// Offset `distance` in front of each forecast frame at head height. Frames
/// with coincident shoulders reuse the previous facing direction. Returns the
/// last facing direction used.
pub fn servo_reference(
    forecast: &[HumanFrame],
    distance: f64,
    horizon: usize,
    previous_facing: Option<Vector3<f64>>,
) -> Result<(Reference, Vector3<f64>)> {
    if forecast.is_empty() {
        return Err(Error::InvalidParameter("servo reference needs at least one forecast frame".into()));
    }
    let mut facing = previous_facing.unwrap_or_else(Vector3::x);
    let x_hat = (0..horizon)
        .map(|k| {
            let f = &forecast[k.min(forecast.len() - 1)];
            if let Some(dir) = f.facing() {
                facing = dir;
            }
            let root = f.root();
            let target = Vector3::new(root.x, root.y, f.joints[joint::HEAD].z) + facing * distance;
            position_target(&target)
        })
        .collect();
    Ok((Reference { x_hat }, facing))
}

/// A linear inequality `coeffs' U >= b` over the whole input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRow {
    pub coeffs: DVector<f64>,
    pub b: f64,
    pub k: usize,
    pub human: usize,
}

/// Safety constraints handed to a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SafetyInput {
    /// Rows on the first input only; softened when jointly infeasible.
    pub u0_rows: Vec<ConstraintRow>,
    /// Rows over the whole plan; replaced by a penalty if the QP is infeasible.
    pub full_rows: Vec<FullRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub u0: ControlInput,
    pub planned_states: Vec<StateVector>,
    pub plan: DVector<f64>,
    pub solver_status: QpStatus,
    pub iterations: usize,
    /// Seconds.
    pub solve_time: f64,
    /// Seconds.
    pub assembly_time: f64,
    pub softened: bool,
    /// No solve succeeded and `u0` is the clamped zero input.
    pub emergency: bool,
    pub report: SafetyReport,
}

/// Per-run controller holding the condensed matrices and a factorized
/// Hessian.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub cfg: ControllerConfig,
    pub stacked: StackedDynamics,
    pub reach: MavReach,
    pub human_params: HumanReachParams,
    pub skeleton: SkeletonMap,
    pub regime: SetRegime,
    solver: DenseQpSolver,
    /// `Gamma' Qbar`.
    grad_ref: DMatrix<f64>,
    /// `Gamma' Qbar Phi`.
    grad_x0: DMatrix<f64>,
    /// State-box rows over `U` and the matching stacked-state index and sign.
    state_a: DMatrix<f64>,
    state_meta: Vec<(usize, f64, f64)>,
    warm: Option<DVector<f64>>,
    /// Hard safety rows of the previous step.
    last_rows: Vec<ConstraintRow>,
}

impl Mpc {
    pub fn new(cfg: ControllerConfig, model: &ModelParams) -> Result<Self> {
        cfg.validate()?;
        if (model.ts - cfg.ts).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "controller Ts {} differs from model Ts {}",
                cfg.ts, model.ts
            )));
        }
        let dm = build_model(model)?;
        let stacked = stack(&dm, cfg.horizon)?;
        let t = cfg.horizon;
        let nx = STATE_DIM * t;
        let nu = INPUT_DIM * t;
        let terminal = match cfg.q_terminal {
            Some(w) => StateMatrix::from_diagonal(&StateVector::from(w)),
            None => lqr_cost_to_go(&dm, &cfg.q, &cfg.r)?,
        };
        let last = nx - STATE_DIM;
        let mut gt_q = stacked.gamma.transpose();
        for (j, mut col) in gt_q.columns_mut(0, last).column_iter_mut().enumerate() {
            col *= cfg.q[j % STATE_DIM];
        }
        let tail = stacked.gamma.rows(last, STATE_DIM).transpose() * terminal;
        gt_q.columns_mut(last, STATE_DIM).copy_from(&tail);
        let mut h = &gt_q * &stacked.gamma;
        for i in 0..nu {
            h[(i, i)] += cfg.r[i % INPUT_DIM];
        }
        let h = (&h + h.transpose()) * 0.5;
        let solver = DenseQpSolver::new(&h)?;
        let grad_x0 = &gt_q * &stacked.phi;

        let mut rows = Vec::new();
        let mut state_meta = Vec::new();
        for k in 0..t {
            for i in 0..STATE_DIM {
                let r = k * STATE_DIM + i;
                if let Some(lo) = cfg.x_min[i] {
                    rows.push(stacked.gamma.row(r).into_owned());
                    state_meta.push((r, lo, 1.0));
                }
                if let Some(hi) = cfg.x_max[i] {
                    rows.push(-stacked.gamma.row(r).into_owned());
                    state_meta.push((r, hi, -1.0));
                }
            }
        }
        let state_a = if rows.is_empty() { DMatrix::zeros(0, nu) } else { DMatrix::from_rows(&rows) };
        let reach = MavReach::new(&stacked, &cfg.bounds());
        Ok(Self {
            cfg,
            stacked,
            reach,
            human_params: HumanReachParams::default(),
            skeleton: SkeletonMap::default(),
            regime: SetRegime::Hybrid,
            solver,
            grad_ref: gt_q,
            grad_x0,
            state_a,
            state_meta,
            warm: None,
            last_rows: Vec::new(),
        })
    }

    pub fn with_humans(mut self, params: HumanReachParams, skeleton: SkeletonMap, regime: SetRegime) -> Result<Self> {
        params.validate()?;
        skeleton.validate()?;
        self.human_params = params;
        self.skeleton = skeleton;
        self.regime = regime;
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        self.solver.hessian()
    }

    /// Tracking gradient `Gamma' Qbar (Phi x0 - x̂)`.
    pub fn gradient(&self, x0: &StateVector, reference: &Reference) -> DVector<f64> {
        let xr = DVector::from_iterator(
            STATE_DIM * self.cfg.horizon,
            reference.x_hat.iter().flat_map(|x| x.iter().copied()),
        );
        &self.grad_x0 * x0 - &self.grad_ref * xr
    }

    /// Safety rows on `u0` against the current observations.
    pub fn safety_rows(&self, x0: &StateVector, observations: &[HumanObservation]) -> Result<Vec<ConstraintRow>> {
        let sets = observations
            .iter()
            .map(|o| hybrid_set(o, self.cfg.horizon, self.cfg.ts, &self.skeleton, &self.human_params, self.regime))
            .collect::<Result<Vec<_>>>()?;
        let rows = build_rows(x0, &self.reach, &sets, self.cfg.epsilon);
        let fresh = self.feasibility(rows.clone());
        if fresh.feasible_under_bounds {
            return Ok(rows);
        }
        if !self.last_rows.is_empty() {
            let guided = build_rows_guided(x0, &self.reach, &sets, self.cfg.epsilon, &self.last_rows);
            if self.feasibility(guided.clone()).feasible_under_bounds {
                return Ok(guided);
            }
        }
        // Refit the hyperplanes around inputs that are likely to escape:
        // the shifted previous plan, the previous input and the best partial
        // witness.
        let mut guesses = Vec::new();
        if let Some(w) = &self.warm {
            if w.len() >= 2 * INPUT_DIM {
                guesses.push(InputVector::new(w[3], w[4], w[5]));
            }
            guesses.push(InputVector::new(w[0], w[1], w[2]));
        }
        guesses.extend(fresh.witness.map(InputVector::from));
        for guess in guesses {
            let refit = build_rows_at(x0, &self.reach, &sets, self.cfg.epsilon, &guess);
            if self.feasibility(refit.clone()).feasible_under_bounds {
                return Ok(refit);
            }
        }
        Ok(rows)
    }

    fn feasibility(&self, rows: Vec<ConstraintRow>) -> SafetyReport {
        let bounds = self.cfg.bounds();
        check_feasible(prune(rows, &bounds, PRUNE_SLACK), &bounds, self.cfg.epsilon)
    }

    /// One control step of the reachability-constrained controller.
    pub fn step(
        &mut self,
        x0: &StateVector,
        observations: &[HumanObservation],
        reference: &Reference,
    ) -> Result<PlanResult> {
        let start = Instant::now();
        let rows = self.safety_rows(x0, observations)?;
        let build_time = start.elapsed().as_secs_f64();
        let mut res = self.plan(x0, reference, SafetyInput { u0_rows: rows, full_rows: vec![] })?;
        res.assembly_time += build_time;
        Ok(res)
    }

    /// Assemble the condensed QP.
    pub fn assemble(
        &self,
        x0: &StateVector,
        reference: &Reference,
        u0_rows: &[ConstraintRow],
        u0_gradient: &InputVector,
        full_rows: &[FullRow],
        with_state_rows: bool,
    ) -> QuadraticProgram {
        let t = self.cfg.horizon;
        let nu = INPUT_DIM * t;
        let mut g = self.gradient(x0, reference);
        for i in 0..INPUT_DIM {
            g[i] += u0_gradient[i];
        }
        let bounds = self.cfg.bounds();
        let (lo, hi) = (bounds.min.to_vector(), bounds.max.to_vector());
        let lb = DVector::from_fn(nu, |i, _| lo[i % INPUT_DIM]);
        let ub = DVector::from_fn(nu, |i, _| hi[i % INPUT_DIM]);
        let n_state = if with_state_rows { self.state_a.nrows() } else { 0 };
        let m = u0_rows.len() + full_rows.len() + n_state;
        let mut a = DMatrix::zeros(m, nu);
        let mut b = DVector::zeros(m);
        for (i, r) in u0_rows.iter().enumerate() {
            for j in 0..INPUT_DIM {
                a[(i, j)] = r.a[j];
            }
            b[i] = r.b;
        }
        let off = u0_rows.len();
        for (i, r) in full_rows.iter().enumerate() {
            a.row_mut(off + i).copy_from(&r.coeffs.transpose());
            b[off + i] = r.b;
        }
        if with_state_rows {
            let off = off + full_rows.len();
            a.view_mut((off, 0), (n_state, nu)).copy_from(&self.state_a);
            let phi_x0 = &self.stacked.phi * x0;
            for (i, &(r, limit, sign)) in self.state_meta.iter().enumerate() {
                b[off + i] = sign * (limit - phi_x0[r]);
            }
        }
        QuadraticProgram::unconstrained(self.solver.hessian().clone(), g)
            .with_bounds(lb, ub)
            .with_rows(a, b)
    }

    fn warm_start(&self) -> Option<DVector<f64>> {
        let w = self.warm.as_ref()?;
        let n = w.len();
        let mut s = DVector::zeros(n);
        s.rows_mut(0, n - INPUT_DIM).copy_from(&w.rows(INPUT_DIM, n - INPUT_DIM));
        s.rows_mut(n - INPUT_DIM, INPUT_DIM).copy_from(&w.rows(n - INPUT_DIM, INPUT_DIM));
        Some(s)
    }

    /// Solve one step given precomputed safety rows.
    pub fn plan(&mut self, x0: &StateVector, reference: &Reference, safety: SafetyInput) -> Result<PlanResult> {
        if reference.len() != self.cfg.horizon || !reference.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reference must hold {} finite states",
                self.cfg.horizon
            )));
        }
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("state is not finite".into()));
        }
        let start = Instant::now();
        let bounds = self.cfg.bounds();
        let rows = prune(safety.u0_rows, &bounds, PRUNE_SLACK);
        let report = check_feasible(rows, &bounds, self.cfg.epsilon);
        let mut softened = !report.feasible_under_bounds;
        let hard = report.retained_rows();
        self.last_rows = hard.clone();
        let violated: Vec<ConstraintRow> = report.violated_rows.iter().map(|&i| report.rows[i]).collect();
        let soft_grad = soften(&violated, self.cfg.lambda);
        let mut qp = self.assemble(x0, reference, &hard, &soft_grad, &safety.full_rows, true);
        let mut assembly_time = start.elapsed().as_secs_f64();

        let warm = self.warm_start();
        let solve_start = Instant::now();
        let mut sol = self.solver.solve(&qp, warm.as_ref(), self.cfg.tol_kkt, self.cfg.max_iter)?;
        let mut iterations = sol.iterations;
        if sol.status == QpStatus::PrimalInfeasible {
            // State limits can conflict with the safety rows; they yield first.
            let t0 = Instant::now();
            qp = self.assemble(x0, reference, &hard, &soft_grad, &safety.full_rows, false);
            assembly_time += t0.elapsed().as_secs_f64();
            sol = self.solver.solve(&qp, warm.as_ref(), self.cfg.tol_kkt, self.cfg.max_iter)?;
            iterations += sol.iterations;
        }
        if sol.status == QpStatus::PrimalInfeasible && !safety.full_rows.is_empty() {
            let t0 = Instant::now();
            let mut extra = DVector::zeros(INPUT_DIM * self.cfg.horizon);
            for r in &safety.full_rows {
                extra -= &r.coeffs * self.cfg.lambda;
            }
            qp = self.assemble(x0, reference, &hard, &soft_grad, &[], true);
            qp.g += extra;
            assembly_time += t0.elapsed().as_secs_f64();
            sol = self.solver.solve(&qp, warm.as_ref(), self.cfg.tol_kkt, self.cfg.max_iter)?;
            iterations += sol.iterations;
            softened = true;
        }
        let solve_time = solve_start.elapsed().as_secs_f64();

        let emergency = sol.status == QpStatus::PrimalInfeasible || sol.z.iter().any(|v| !v.is_finite());
        let plan = if emergency {
            let zero = bounds.clamp(&InputVector::zeros());
            DVector::from_fn(INPUT_DIM * self.cfg.horizon, |i, _| zero[i % INPUT_DIM])
        } else {
            sol.z.clone()
        };
        let u0 = bounds.clamp(&InputVector::from_column_slice(&plan.as_slice()[..INPUT_DIM]));
        let planned_states = self.stacked.predict(x0, plan.as_slice());
        self.warm = (!emergency).then(|| plan.clone());
        Ok(PlanResult {
            u0: ControlInput::from_vector(&u0),
            planned_states,
            plan,
            solver_status: sol.status,
            iterations,
            solve_time,
            assembly_time,
            softened,
            emergency,
            report,
        })
    }

    /// Previous plan, used for linearizing plan-wide constraints.
    pub fn previous_plan(&self) -> Option<&DVector<f64>> {
        self.warm.as_ref()
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.last_rows.clear();
    }
}
