//! Safety constraints for the compared navigation methods.

use nalgebra::{DVector, Vector3};

use crate::controller::{ControllerConfig, FullRow, Mpc, SafetyInput};
use crate::dynamics::{StateVector, INPUT_DIM, POSITION_ROWS, STATE_DIM};
use crate::error::Result;
use crate::humans::{HumanFrame, NUM_JOINTS};
use crate::reach::{hybrid_set, HumanObservation, SetRegime};
use crate::safety::PRUNE_SLACK;

use super::scenario::MethodKind;

/// Minimum joint clearance enforced by the distance-constraint baselines (m).
pub const DC_CLEARANCE: f64 = 0.5;

/// Human set regime used by the reachability-based methods.
pub fn regime(kind: MethodKind) -> SetRegime {
    match kind {
        MethodKind::RcSimplified => SetRegime::Simplified,
        MethodKind::RcComplex => SetRegime::Complex,
        _ => SetRegime::Hybrid,
    }
}

/// Method-specific controller changes: the planar baseline pins thrust so
/// altitude stays at its initial value.
pub fn configure(kind: MethodKind, cfg: &mut ControllerConfig) {
    if kind == MethodKind::Nav2d {
        cfg.u_min.tau = 0.0;
        cfg.u_max.tau = 0.0;
    }
}

/// Inputs available to the constraint builders at one control step.
pub struct MethodContext<'a> {
    pub mpc: &'a Mpc,
    pub x0: &'a StateVector,
    pub observations: &'a [HumanObservation],
    /// Per human, predicted frames for lead steps `1..=T` (only used by the
    /// forecast-driven baselines).
    pub forecasts: &'a [Vec<HumanFrame>],
}

/// Positions `p_k` over the horizon for the previous plan shifted by one
/// step, or for the hover input when there is none.
fn linearization_points(ctx: &MethodContext) -> Vec<Vector3<f64>> {
    let t = ctx.mpc.horizon();
    let plan = match ctx.mpc.previous_plan() {
        Some(w) => {
            let n = w.len();
            let mut s = DVector::zeros(n);
            s.rows_mut(0, n - INPUT_DIM).copy_from(&w.rows(INPUT_DIM, n - INPUT_DIM));
            s.rows_mut(n - INPUT_DIM, INPUT_DIM).copy_from(&w.rows(n - INPUT_DIM, INPUT_DIM));
            s
        }
        None => DVector::zeros(INPUT_DIM * t),
    };
    ctx.mpc
        .stacked
        .predict(ctx.x0, plan.as_slice())
        .iter()
        .map(|x| Vector3::new(x[POSITION_ROWS[0]], x[POSITION_ROWS[1]], x[POSITION_ROWS[2]]))
        .collect()
}

/// Row `n' p_k(U) >= rhs` over the whole input sequence.
fn position_row(ctx: &MethodContext, k: usize, n: &Vector3<f64>, rhs: f64, human: usize) -> FullRow {
    let s = &ctx.mpc.stacked;
    let nu = INPUT_DIM * s.horizon;
    let base = (k - 1) * STATE_DIM;
    let mut coeffs = DVector::zeros(nu);
    for (axis, &r) in POSITION_ROWS.iter().enumerate() {
        if n[axis] != 0.0 {
            coeffs.axpy(n[axis], &s.gamma.row(base + r).transpose(), 1.0);
        }
    }
    let free = s.a_pow(k) * ctx.x0;
    let p_free = Vector3::new(free[POSITION_ROWS[0]], free[POSITION_ROWS[1]], free[POSITION_ROWS[2]]);
    FullRow { coeffs, b: rhs - n.dot(&p_free), k, human }
}

/// Whether the row holds with more than the pruning slack for every input
/// sequence in the box.
fn is_slack(row: &FullRow, cfg: &ControllerConfig) -> bool {
    let (lo, hi) = (cfg.u_min.to_vector(), cfg.u_max.to_vector());
    let worst: f64 = row
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (c * lo[i % INPUT_DIM]).min(c * hi[i % INPUT_DIM]))
        .sum();
    worst - row.b > PRUNE_SLACK
}

/// The planned position at every step must stay outside every primitive of
/// the human reachable set (disjointness rather than non-containment).
fn forward_rc_rows(ctx: &MethodContext) -> Result<Vec<FullRow>> {
    let mpc = ctx.mpc;
    let points = linearization_points(ctx);
    let mut rows = Vec::new();
    for (h, obs) in ctx.observations.iter().enumerate() {
        let set = hybrid_set(obs, mpc.horizon(), mpc.cfg.ts, &mpc.skeleton, &mpc.human_params, SetRegime::Hybrid)?;
        for k in 1..=mpc.horizon() {
            for prim in set.step(k) {
                let bp = prim.closest_point_normal(&points[k - 1]);
                let row = position_row(ctx, k, &bp.normal, bp.normal.dot(&bp.point) + mpc.cfg.epsilon, h);
                if !is_slack(&row, &mpc.cfg) {
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Joint-wise clearance `|p_k - j_k| >= DC_CLEARANCE`, linearized about the
/// previous plan, with joints predicted by `joints_at(human, k)`.
fn distance_rows(ctx: &MethodContext, joints_at: impl Fn(usize, usize) -> HumanFrame) -> Vec<FullRow> {
    let mpc = ctx.mpc;
    let points = linearization_points(ctx);
    let mut rows = Vec::new();
    for h in 0..ctx.observations.len() {
        for k in 1..=mpc.horizon() {
            let frame = joints_at(h, k);
            for j in 0..NUM_JOINTS {
                let joint = frame.joints[j];
                let d = points[k - 1] - joint;
                let n = if d.norm() > 1e-9 { d.normalize() } else { Vector3::z() };
                let row = position_row(ctx, k, &n, n.dot(&joint) + DC_CLEARANCE, h);
                if !is_slack(&row, &mpc.cfg) {
                    rows.push(row);
                }
            }
        }
    }
    rows
}

/// Constraints for one control step of `kind`.
pub fn method_constraints(kind: MethodKind, ctx: &MethodContext) -> Result<SafetyInput> {
    Ok(match kind {
        MethodKind::None => SafetyInput::default(),
        MethodKind::Ours | MethodKind::RcSimplified | MethodKind::RcComplex | MethodKind::Nav2d => {
            SafetyInput { u0_rows: ctx.mpc.safety_rows(ctx.x0, ctx.observations)?, full_rows: vec![] }
        }
        MethodKind::ForwardRc => SafetyInput { u0_rows: vec![], full_rows: forward_rc_rows(ctx)? },
        MethodKind::DcStatic => SafetyInput {
            u0_rows: vec![],
            full_rows: distance_rows(ctx, |h, _| ctx.observations[h].frame.clone()),
        },
        MethodKind::DcConstVel | MethodKind::DcForecast => SafetyInput {
            u0_rows: vec![],
            full_rows: distance_rows(ctx, |h, k| {
                let f = &ctx.forecasts[h];
                if f.is_empty() {
                    ctx.observations[h].frame.clone()
                } else {
                    f[(k - 1).min(f.len() - 1)].clone()
                }
            }),
        },
    })
}
