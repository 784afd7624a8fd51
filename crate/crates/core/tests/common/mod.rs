//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use humanmpc::qp::QuadraticProgram;
use humanmpc::reach::{ReachPrimitive, Zonotope};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

/// Maximum of `n' x` over all `2^m` sign vertices of the zonotope.
pub fn support_by_vertices(z: &Zonotope, n: &DVector<f64>) -> f64 {
    let m = z.generators.ncols();
    assert!(m <= 16, "vertex enumeration is exponential");
    let proj: Vec<f64> = (0..m).map(|j| z.generators.column(j).dot(n)).collect();
    let c = z.center.dot(n);
    (0u32..1 << m)
        .map(|mask| c + (0..m).map(|j| if mask >> j & 1 == 1 { proj[j] } else { -proj[j] }).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Constraints of a QP as rows `c' z >= d`, bounds included.
fn all_rows(qp: &QuadraticProgram) -> Vec<(DVector<f64>, f64)> {
    let n = qp.num_vars();
    let mut rows: Vec<(DVector<f64>, f64)> =
        (0..qp.num_rows()).map(|i| (qp.a_ineq.row(i).transpose(), qp.b_ineq[i])).collect();
    for j in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        if qp.lb[j].is_finite() {
            rows.push((e.clone(), qp.lb[j]));
        }
        if qp.ub[j].is_finite() {
            rows.push((-e, -qp.ub[j]));
        }
    }
    rows
}

/// Optimal objective by enumerating every active set and keeping the best
/// primal-feasible stationary point. `None` when no point is feasible.
pub fn qp_by_enumeration(qp: &QuadraticProgram) -> Option<(f64, DVector<f64>)> {
    let n = qp.num_vars();
    let rows = all_rows(qp);
    let m = rows.len();
    assert!(m <= 12);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..1 << m {
        let act: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        if act.len() > n {
            continue;
        }
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        rhs.rows_mut(0, n).copy_from(&(-&qp.g));
        for (r, &i) in act.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = rows[i].0[c];
                kkt[(c, n + r)] = -rows[i].0[c];
            }
            rhs[n + r] = rows[i].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        if !z.iter().all(|v| v.is_finite()) {
            continue;
        }
        if rows.iter().all(|(c, d)| c.dot(&z) >= d - 1e-8) {
            let f = qp.objective(&z);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, z));
            }
        }
    }
    best
}

/// Random strictly convex QP with at most `max_rows` general rows, feasible
/// by construction, and a few finite bounds.
pub fn random_qp<R: Rng>(rng: &mut R, max_n: usize, max_rows: usize) -> QuadraticProgram {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(0..=max_rows);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(m, |i, _| a.row(i).dot(&z0.transpose()) - rng.random_range(0.0..0.5));
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    for j in 0..n.min(2) {
        if rng.random_bool(0.5) {
            lb[j] = z0[j] - rng.random_range(0.0..1.0);
            ub[j] = z0[j] + rng.random_range(0.0..1.0);
        }
    }
    QuadraticProgram::unconstrained(h, g).with_bounds(lb, ub).with_rows(a, b)
}

/// Point of the zonotope for a parameter vector with entries in [-1, 1].
fn zonotope_point(z: &Zonotope, xi: &[f64]) -> Vector3<f64> {
    let p = &z.center + &z.generators * DVector::from_column_slice(xi);
    Vector3::new(p[0], p[1], p[2])
}

/// Whether random sampling finds a zonotope point outside `prim`. Half of the
/// samples are sign vertices, half uniform in the parameter cube.
pub fn sampling_finds_outside<R: Rng>(z: &Zonotope, prim: &ReachPrimitive, samples: usize, rng: &mut R) -> bool {
    let m = z.generators.ncols();
    let mut xi = vec![0.0; m];
    if !prim.contains(&zonotope_point(z, &xi), 0.0) {
        return true;
    }
    for s in 0..samples {
        for v in xi.iter_mut() {
            *v = if s % 2 == 0 {
                if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                rng.random_range(-1.0..=1.0)
            };
        }
        if !prim.contains(&zonotope_point(z, &xi), 0.0) {
            return true;
        }
    }
    false
}

/// Fourth-order Runge-Kutta integration of `x' = A x + B u` over `t`.
pub fn rk4<const N: usize, const M: usize>(
    a: &nalgebra::SMatrix<f64, N, N>,
    b: &nalgebra::SMatrix<f64, N, M>,
    x: &nalgebra::SVector<f64, N>,
    u: &nalgebra::SVector<f64, M>,
    t: f64,
    steps: usize,
) -> nalgebra::SVector<f64, N> {
    let h = t / steps as f64;
    let f = |x: &nalgebra::SVector<f64, N>| a * x + b * u;
    let mut x = *x;
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}
