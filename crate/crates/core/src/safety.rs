//! Linear non-containment rows on the first control input.
//!
//! For step `k` and a convex human primitive with boundary point `m` and
//! outward normal `n`, the MAV set escapes the primitive whenever its support
//! in direction `n` clears the tangent plane:
//!
//! ```text
//! n'(P A^k x0 + P A^{k-1} B u0 + drift_k) + |G_k' n|_1 >= n'm + eps
//! ```
//!
//! which rearranges to `a' u0 >= b`. The pair `(m, n)` is taken at the set
//! center obtained with `u0` at the box center, so `a` and `b` do not depend
//! on the candidate `u0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlBounds, InputVector, StackedDynamics, StateVector, INPUT_DIM};
use crate::qp::{DenseQpSolver, QpStatus, QuadraticProgram};
use crate::reach::{BoundaryPoint, HumanReachableSet, MavReach, Point3};

/// Default separation margin (m).
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Rows whose worst-case slack over the control box exceeds this are dropped.
pub const PRUNE_SLACK: f64 = 10.0;
/// Feasibility tolerance for row checks.
pub const ROW_TOL: f64 = 1e-9;

/// `a' u0 >= b` for horizon step `k` against primitive `primitive` of human
/// `human`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub a: [f64; 3],
    pub b: f64,
    pub k: usize,
    pub human: usize,
    pub primitive: usize,
    /// `|G_k' n|_1`, already folded into `b`.
    pub half_extent: f64,
    /// Outward normal of the separating hyperplane.
    #[serde(default)]
    pub normal: [f64; 3],
}

impl ConstraintRow {
    pub fn a_vec(&self) -> InputVector {
        InputVector::from(self.a)
    }

    pub fn slack(&self, u0: &InputVector) -> f64 {
        self.a_vec().dot(u0) - self.b
    }

    /// Largest slack attainable inside the box.
    pub fn max_slack(&self, bounds: &ControlBounds) -> f64 {
        let (lo, hi) = (bounds.min.to_vector(), bounds.max.to_vector());
        (0..INPUT_DIM).map(|i| (self.a[i] * lo[i]).max(self.a[i] * hi[i])).sum::<f64>() - self.b
    }

    /// Smallest slack over the box.
    pub fn min_slack(&self, bounds: &ControlBounds) -> f64 {
        let (lo, hi) = (bounds.min.to_vector(), bounds.max.to_vector());
        (0..INPUT_DIM).map(|i| (self.a[i] * lo[i]).min(self.a[i] * hi[i])).sum::<f64>() - self.b
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite()) && self.b.is_finite()
    }
}

/// Rows for every step and primitive of each human set, sorted by
/// `(k, human, primitive)`.
pub fn build_rows(
    x0: &StateVector,
    reach: &MavReach,
    humans: &[HumanReachableSet],
    epsilon: f64,
) -> Vec<ConstraintRow> {
    build_rows_guided(x0, reach, humans, epsilon, &[])
}

/// Like [`build_rows`], but a primitive that had a row at step `k + 1` in
/// `previous` keeps that row's normal at step `k`. Shifting the normals along
/// with the horizon preserves feasibility of the individual rows from one
/// control step to the next when the human sets shrink accordingly.
pub fn build_rows_guided(
    x0: &StateVector,
    reach: &MavReach,
    humans: &[HumanReachableSet],
    epsilon: f64,
    previous: &[ConstraintRow],
) -> Vec<ConstraintRow> {
    let mut rows = Vec::new();
    for k in 1..=row_horizon(reach, humans) {
        let center = reach.reference_center(x0, k);
        for (h, set) in humans.iter().enumerate() {
            let prims = set.step(k);
            let same_regime = k < set.steps.len() && set.step(k + 1).len() == prims.len();
            for (i, prim) in prims.iter().enumerate() {
                let row_for = |bp: BoundaryPoint| row_from(x0, reach, epsilon, (k, h, i), &bp);
                let carried = previous
                    .iter()
                    .find(|r| same_regime && r.k == k + 1 && r.human == h && r.primitive == i)
                    .map(|r| Point3::from(r.normal))
                    .filter(|n| (n.norm() - 1.0).abs() < 1e-9);
                if let Some(n) = carried {
                    rows.push(row_for(prim.support_point(&n)));
                    continue;
                }
                // Keep the hyperplane with the most attainable margin; the
                // closest one wins ties.
                let mut best: Option<(f64, ConstraintRow)> = None;
                for bp in prim.supporting_candidates(&center) {
                    let row = row_for(bp);
                    let m = row.max_slack(&reach.bounds);
                    if best.as_ref().is_none_or(|(bm, _)| m > *bm) {
                        best = Some((m, row));
                    }
                }
                rows.extend(best.map(|(_, r)| r));
            }
        }
    }
    rows
}

/// Rows whose hyperplanes are fitted to the sets reached with `u0 = guess`.
///
/// Each normal comes from an ascent of the primitive's signed distance over
/// the zonotope vertices: the vertex extreme along the current normal is
/// projected onto the primitive and the normal at that projection replaces
/// it. The signed distance never decreases along the way. Whenever every set
/// leaves its primitive by at least `epsilon` under `guess`, `guess`
/// satisfies all returned rows.
pub fn build_rows_at(
    x0: &StateVector,
    reach: &MavReach,
    humans: &[HumanReachableSet],
    epsilon: f64,
    guess: &InputVector,
) -> Vec<ConstraintRow> {
    const ASCENT_STEPS: usize = 8;
    let mut rows = Vec::new();
    for k in 1..=row_horizon(reach, humans) {
        let center = reach.offset(x0, k) + reach.u0_map(k) * guess;
        let gens = reach.generators(k);
        let vertex = |n: &Point3| {
            let mut p = center;
            for g in gens.column_iter() {
                let g = Point3::new(g[0], g[1], g[2]);
                p += if g.dot(n) >= 0.0 { g } else { -g };
            }
            p
        };
        for (h, set) in humans.iter().enumerate() {
            for (i, prim) in set.step(k).iter().enumerate() {
                let mut best: Option<(f64, ConstraintRow)> = None;
                for start in prim.supporting_candidates(&center) {
                    let mut bp = start;
                    for _ in 0..ASCENT_STEPS {
                        let row = row_from(x0, reach, epsilon, (k, h, i), &bp);
                        let s = row.slack(guess);
                        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                            best = Some((s, row));
                        }
                        let next = prim.closest_point_normal(&vertex(&bp.normal));
                        if (next.normal - bp.normal).norm() < 1e-12 {
                            break;
                        }
                        bp = next;
                    }
                }
                rows.extend(best.map(|(_, r)| r));
            }
        }
    }
    rows
}

fn row_horizon(reach: &MavReach, humans: &[HumanReachableSet]) -> usize {
    reach.horizon.min(humans.iter().map(|h| h.steps.len()).min().unwrap_or(0))
}

/// The row for boundary point `bp` of primitive `(k, human, primitive)`.
fn row_from(
    x0: &StateVector,
    reach: &MavReach,
    epsilon: f64,
    (k, human, primitive): (usize, usize, usize),
    bp: &BoundaryPoint,
) -> ConstraintRow {
    let n = bp.normal;
    let a = reach.u0_map(k).transpose() * n;
    let half_extent = reach.extent(k, &n);
    let b = epsilon + n.dot(&bp.point) - n.dot(&reach.offset(x0, k)) - half_extent;
    ConstraintRow { a: [a.x, a.y, a.z], b, k, human, primitive, half_extent, normal: n.into() }
}

/// Convenience wrapper building the cached reach data on the fly.
pub fn build_rows_from(
    x0: &StateVector,
    stacked: &StackedDynamics,
    humans: &[HumanReachableSet],
    bounds: &ControlBounds,
    epsilon: f64,
) -> Vec<ConstraintRow> {
    build_rows(x0, &MavReach::new(stacked, bounds), humans, epsilon)
}

/// Drop rows that hold with more than `threshold` slack everywhere in the box.
pub fn prune(rows: Vec<ConstraintRow>, bounds: &ControlBounds, threshold: f64) -> Vec<ConstraintRow> {
    rows.into_iter().filter(|r| r.min_slack(bounds) <= threshold).collect()
}

/// Feasibility verdict for a set of rows under the control box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub rows: Vec<ConstraintRow>,
    pub feasible_under_bounds: bool,
    /// Indices into `rows` of the rows dropped to restore feasibility.
    pub violated_rows: Vec<usize>,
    pub epsilon: f64,
    /// A control satisfying all retained rows.
    pub witness: Option<[f64; 3]>,
}

impl SafetyReport {
    pub fn retained_rows(&self) -> Vec<ConstraintRow> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.violated_rows.contains(i))
            .map(|(_, r)| *r)
            .collect()
    }
}

/// Witness for `rows` within `bounds`, or the index of a row blocking
/// feasibility.
fn find_witness(rows: &[&ConstraintRow], bounds: &ControlBounds) -> std::result::Result<InputVector, Option<usize>> {
    let ok = |u: &InputVector| rows.iter().all(|r| r.slack(u) >= -ROW_TOL);
    let center = bounds.center();
    if ok(&center) {
        return Ok(center);
    }
    if let Some(v) = bounds.vertices().into_iter().find(ok) {
        return Ok(v);
    }
    // Closest point to the box center in the feasible polytope.
    let n = INPUT_DIM;
    let h = DMatrix::identity(n, n);
    let g = -DVector::from_column_slice(center.as_slice());
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].a[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.b));
    let qp = QuadraticProgram::unconstrained(h.clone(), g)
        .with_bounds(
            DVector::from_column_slice(bounds.min.to_vector().as_slice()),
            DVector::from_column_slice(bounds.max.to_vector().as_slice()),
        )
        .with_rows(a, b);
    let solver = DenseQpSolver::new(&h).expect("identity Hessian");
    match solver.solve(&qp, None, 1e-9, 500) {
        Ok(sol) if sol.status != QpStatus::PrimalInfeasible && ok(&InputVector::from_column_slice(sol.z.as_slice())) => {
            Ok(InputVector::from_column_slice(sol.z.as_slice()))
        }
        Ok(sol) => Err(sol.blocking_constraint.filter(|&i| i < rows.len())),
        Err(_) => Err(None),
    }
}

/// Decide whether some `u0` in the box satisfies every row. When none does,
/// rows are dropped until the rest are jointly satisfiable: first rows that
/// fail on their own, then the row blocking the solver, falling back to the
/// row with the least attainable slack.
pub fn check_feasible(rows: Vec<ConstraintRow>, bounds: &ControlBounds, epsilon: f64) -> SafetyReport {
    let mut dropped: Vec<usize> = Vec::new();
    let mut active: Vec<usize> = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.max_slack(bounds) < -ROW_TOL {
            dropped.push(i);
        } else {
            active.push(i);
        }
    }
    let witness = loop {
        let refs: Vec<&ConstraintRow> = active.iter().map(|&i| &rows[i]).collect();
        match find_witness(&refs, bounds) {
            Ok(u) => break Some(u),
            Err(blocking) => {
                let pos = blocking.unwrap_or_else(|| {
                    (0..active.len())
                        .min_by(|&x, &y| rows[active[x]].max_slack(bounds).total_cmp(&rows[active[y]].max_slack(bounds)))
                        .unwrap_or(0)
                });
                if active.is_empty() {
                    break None;
                }
                dropped.push(active.remove(pos));
            }
        }
    };
    dropped.sort_unstable();
    SafetyReport {
        feasible_under_bounds: dropped.is_empty(),
        violated_rows: dropped,
        epsilon,
        witness: witness.map(|u| [u[0], u[1], u[2]]),
        rows,
    }
}

/// Linear objective term `-lambda * sum(a)` over `u0` replacing the dropped
/// rows: minimizing it pushes `u0` to enlarge each violated margin.
pub fn soften(violated: &[ConstraintRow], lambda: f64) -> InputVector {
    violated.iter().fold(InputVector::zeros(), |acc, r| acc - r.a_vec() * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_model, stack, ModelParams};

    fn row(a: [f64; 3], b: f64) -> ConstraintRow {
        ConstraintRow { a, b, k: 1, human: 0, primitive: 0, half_extent: 0.0, normal: [1.0, 0.0, 0.0] }
    }

    #[test]
    fn empty_rows_feasible() {
        let r = check_feasible(vec![], &ControlBounds::default(), DEFAULT_EPSILON);
        assert!(r.feasible_under_bounds);
        assert!(r.violated_rows.is_empty());
    }

    #[test]
    fn thrust_row_beyond_box() {
        let r = check_feasible(vec![row([1.0, 0.0, 0.0], 0.3)], &ControlBounds::default(), DEFAULT_EPSILON);
        assert!(!r.feasible_under_bounds);
        assert_eq!(r.violated_rows, vec![0]);
    }

    #[test]
    fn compatible_rows_have_witness() {
        let rows = vec![row([1.0, 0.0, 0.0], 0.1), row([0.0, 1.0, 1.0], 0.2), row([1.0, -1.0, 0.0], 0.0)];
        let r = check_feasible(rows.clone(), &ControlBounds::default(), DEFAULT_EPSILON);
        assert!(r.feasible_under_bounds);
        let u = InputVector::from(r.witness.unwrap());
        assert!(ControlBounds::default().contains(&u, 1e-12));
        assert!(rows.iter().all(|r| r.slack(&u) >= -ROW_TOL));
    }

    #[test]
    fn conflicting_pair_drops_one() {
        let rows = vec![row([1.0, 0.0, 0.0], 0.2), row([-1.0, 0.0, 0.0], 0.0), row([0.0, 1.0, 0.0], 0.0)];
        let r = check_feasible(rows, &ControlBounds::default(), DEFAULT_EPSILON);
        assert!(!r.feasible_under_bounds);
        assert_eq!(r.violated_rows.len(), 1);
        assert!(r.witness.is_some());
    }

    #[test]
    fn soften_gradient() {
        let g = soften(&[row([1.0, 0.0, 0.0], 0.0)], 1000.0);
        assert_eq!(g, InputVector::new(-1000.0, 0.0, 0.0));
        assert_eq!(soften(&[], 1000.0), InputVector::zeros());
    }

    #[test]
    fn prune_keeps_tight_rows() {
        let b = ControlBounds::default();
        let rows = vec![row([1.0, 0.0, 0.0], -20.0), row([1.0, 0.0, 0.0], 0.0)];
        let kept = prune(rows, &b, PRUNE_SLACK);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].b, 0.0);
    }

    #[test]
    fn rows_on_toy_double_integrator() {
        use crate::reach::ReachPrimitive;
        use nalgebra::Vector3;
        // Only thrust drives z: a wall above the MAV gives a row on tau alone.
        let params = ModelParams { c_x: 0.0, c_y: 0.0, c_z: 0.0, ..ModelParams::default() };
        let m = build_model(&params).unwrap();
        let s = stack(&m, 3).unwrap();
        let bounds = ControlBounds::default();
        let reach = MavReach::new(&s, &bounds);
        let prim = ReachPrimitive::Sphere { center: Vector3::new(0.0, 0.0, -100.0), radius: 99.0 };
        let set = HumanReachableSet { steps: vec![vec![prim]; 3], source_time: 0.0 };
        let x0 = StateVector::zeros();
        let rows = build_rows(&x0, &reach, &[set], 0.01);
        let ts = params.ts;
        let uc = bounds.center()[0];
        let e = bounds.half_range()[0];
        for r in &rows {
            let k = r.k as f64;
            // z_k = ts^2 ((k - 1/2) u0 + sum_{j<k-1} (j + 1/2) u_j)
            let coef = ts * ts * (k - 0.5);
            let rest: f64 = (0..r.k - 1).map(|j| ts * ts * (j as f64 + 0.5)).sum();
            assert!((r.a[0] - coef).abs() < 1e-12);
            assert!(r.a[1].abs() < 1e-15 && r.a[2].abs() < 1e-15);
            let b = 0.01 - 1.0 - rest * uc - rest * e;
            assert!((r.b - b).abs() < 1e-10, "k={} {} vs {}", r.k, r.b, b);
        }
        assert_eq!(rows[0].half_extent, 0.0);
    }

    #[test]
    fn refit_rows_hold_at_escaping_guess() {
        use crate::reach::ReachPrimitive;
        use nalgebra::Vector3;
        let m = build_model(&ModelParams::agile()).unwrap();
        let s = stack(&m, 6).unwrap();
        let bounds = ControlBounds::default();
        let reach = MavReach::new(&s, &bounds);
        let mut x0 = StateVector::zeros();
        x0[2] = 1.2;
        x0[3] = 1.5;
        let prims = [
            ReachPrimitive::Sphere { center: Vector3::new(0.4, 0.3, 1.2), radius: 0.3 },
            ReachPrimitive::Capsule { a: Vector3::new(0.3, -0.6, 0.8), b: Vector3::new(0.3, -0.6, 1.6), radius: 0.25 },
            ReachPrimitive::VerticalCylinder { axis_xy: nalgebra::Vector2::new(-0.2, 0.8), radius: 0.5, z_min: 0.0, z_max: 2.0 },
        ];
        let sets: Vec<HumanReachableSet> =
            prims.iter().map(|p| HumanReachableSet { steps: vec![vec![*p]; 6], source_time: 0.0 }).collect();
        let lo = bounds.min.to_vector();
        let hi = bounds.max.to_vector();
        let mut checked = 0;
        for c in 0..8 {
            let guess = InputVector::from_fn(|i, _| if c >> i & 1 == 1 { hi[i] } else { lo[i] });
            let rows = build_rows_at(&x0, &reach, &sets, 0.01, &guess);
            assert_eq!(rows.len(), 18);
            for r in &rows {
                let z = reach.zonotope(&x0, &crate::dynamics::ControlInput::from_vector(&guess), r.k).unwrap();
                // Deepest escape over the vertices of the set.
                let escape = z
                    .vertices()
                    .iter()
                    .map(|v| prims[r.human].signed_distance(&Vector3::new(v[0], v[1], v[2])))
                    .fold(f64::NEG_INFINITY, f64::max);
                if escape >= 0.02 {
                    checked += 1;
                    assert!(r.slack(&guess) >= -1e-9, "k={} human={} slack={}", r.k, r.human, r.slack(&guess));
                }
            }
        }
        assert!(checked > 50, "{checked}");
    }
}
