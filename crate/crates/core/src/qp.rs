//! Dense convex QP solver.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 z' H z + g' z
//!     subject to  A z >= b
//!                 lb <= z <= ub
//! ```
//!
//! and are solved with the Goldfarb-Idnani dual active-set method. Starting
//! from the unconstrained minimizer, the most violated constraint is added at
//! each outer step while dual feasibility is kept; the active-set
//! factorization is updated with Givens rotations so each step costs `O(n^2)`.
//! When a violated constraint cannot be reached by any dual step the problem
//! is reported primal infeasible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Hessians whose smallest Cholesky pivot falls below this are regularized.
pub const MIN_PIVOT: f64 = 1e-9;
pub const REGULARIZATION: f64 = 1e-8;
pub const DEFAULT_TOL_KKT: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// Inequality rows, read as `a_ineq * z >= b_ineq`.
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem with no rows and infinite bounds.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
        }
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn with_rows(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.len();
        let m = self.b_ineq.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::InvalidProblem(format!(
                "Hessian is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::InvalidProblem("bound vectors do not match variable count".into()));
        }
        if self.a_ineq.nrows() != m || (m > 0 && self.a_ineq.ncols() != n) {
            return Err(Error::InvalidProblem(format!(
                "inequality matrix is {}x{}, expected {m}x{n}",
                self.a_ineq.nrows(),
                self.a_ineq.ncols()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(self.h.as_slice())
            || !finite(self.g.as_slice())
            || !finite(self.a_ineq.as_slice())
            || !finite(self.b_ineq.as_slice())
        {
            return Err(Error::InvalidProblem("non-finite problem data".into()));
        }
        if self.lb.iter().chain(self.ub.iter()).any(|v| v.is_nan()) {
            return Err(Error::InvalidProblem("NaN in bounds".into()));
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(Error::InvalidProblem(format!(
                    "lower bound exceeds upper bound for variable {i}"
                )));
            }
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-9 * scale {
            return Err(Error::InvalidProblem("Hessian is not symmetric".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    PrimalInfeasible,
}

/// Nonnegative multipliers for each constraint family.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { ineq: DVector::zeros(m), lower: DVector::zeros(n), upper: DVector::zeros(n) }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub multipliers: Multipliers,
    pub objective: f64,
    /// Constraint that could not be satisfied, when infeasible. Rows are
    /// numbered first, then lower bounds, then upper bounds.
    pub blocking_constraint: Option<usize>,
}

/// Max-norm KKT violation: stationarity, primal feasibility, dual feasibility
/// and complementarity.
pub fn kkt_residual(qp: &QuadraticProgram, z: &DVector<f64>, mult: &Multipliers) -> f64 {
    let n = qp.num_vars();
    let mut stat = &qp.h * z + &qp.g - &mult.lower + &mult.upper;
    if qp.num_rows() > 0 {
        stat -= qp.a_ineq.transpose() * &mult.ineq;
    }
    let mut res = stat.amax();
    let row_slack = if qp.num_rows() > 0 { &qp.a_ineq * z - &qp.b_ineq } else { DVector::zeros(0) };
    for (i, s) in row_slack.iter().enumerate() {
        let lam = mult.ineq[i];
        res = res.max(-s).max(-lam);
        if lam != 0.0 {
            res = res.max((lam * s).abs());
        }
    }
    for i in 0..n {
        for (slack, lam) in [(z[i] - qp.lb[i], mult.lower[i]), (qp.ub[i] - z[i], mult.upper[i])] {
            res = res.max(-lam);
            if slack.is_finite() {
                res = res.max(-slack);
                if lam != 0.0 {
                    res = res.max((lam * slack).abs());
                }
            } else if lam != 0.0 {
                // Multiplier on an infinite bound can never be complementary.
                res = res.max(lam.abs());
            }
        }
    }
    res
}

/// Prefactored solver for a fixed Hessian. Gradient, bounds and rows may vary
/// between solves.
#[derive(Debug, Clone)]
pub struct DenseQpSolver {
    n: usize,
    /// Cholesky factor of the (possibly regularized) Hessian.
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `L^{-T}`.
    j0: DMatrix<f64>,
    h: DMatrix<f64>,
    regularized: bool,
}

#[derive(Clone, Copy)]
enum Normal {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

impl DenseQpSolver {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(Error::InvalidProblem("Hessian must be square".into()));
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite Hessian".into()));
        }
        let mut regularized = false;
        let chol = match h.clone().cholesky() {
            Some(c) if min_pivot(&c) >= MIN_PIVOT => c,
            _ => {
                regularized = true;
                let reg = h + DMatrix::identity(n, n) * REGULARIZATION;
                reg.cholesky().ok_or_else(|| {
                    Error::InvalidProblem("Hessian is not positive semidefinite".into())
                })?
            }
        };
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::InvalidProblem("singular Cholesky factor".into()))?;
        Ok(Self { n, chol, j0: linv.transpose(), h: h.clone(), regularized })
    }

    pub fn is_regularized(&self) -> bool {
        self.regularized
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Solve `qp`, whose Hessian must be the one this solver was built with.
    pub fn solve(
        &self,
        qp: &QuadraticProgram,
        warm_start: Option<&DVector<f64>>,
        tol_kkt: f64,
        max_iter: usize,
    ) -> Result<QpSolution> {
        qp.validate()?;
        if qp.num_vars() != self.n {
            return Err(Error::InvalidProblem("problem size does not match solver".into()));
        }
        if let Some(ws) = warm_start {
            if ws.len() != self.n || ws.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem("warm start has wrong size or is not finite".into()));
            }
        }
        let mut ws = Workspace::new(self, qp);
        let preferred = warm_start.map(|w| ws.active_at(w)).unwrap_or_default();
        let status = ws.run(&preferred, max_iter);
        let mult = ws.multipliers();
        let z = ws.x.clone();
        let mut kkt = kkt_residual(qp, &z, &mult);
        let mut status = status;
        if status == QpStatus::Optimal && kkt > tol_kkt {
            // One refinement sweep from the reached active set usually fixes
            // cancellation error; otherwise the result is not certified.
            ws.refine();
            let mult = ws.multipliers();
            kkt = kkt_residual(qp, &ws.x, &mult);
            if kkt > tol_kkt {
                status = QpStatus::MaxIterations;
            }
        }
        let mult = ws.multipliers();
        let z = ws.x.clone();
        Ok(QpSolution {
            objective: qp.objective(&z),
            z,
            status,
            kkt_residual: kkt,
            iterations: ws.iterations,
            multipliers: mult,
            blocking_constraint: ws.blocking,
        })
    }
}

fn min_pivot(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    c.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min)
}

/// Solve a QP from scratch.
pub fn solve(
    qp: &QuadraticProgram,
    warm_start: Option<&DVector<f64>>,
    tol_kkt: f64,
    max_iter: usize,
) -> Result<QpSolution> {
    qp.validate()?;
    DenseQpSolver::new(&qp.h)?.solve(qp, warm_start, tol_kkt, max_iter)
}

struct Workspace<'a> {
    qp: &'a QuadraticProgram,
    solver: &'a DenseQpSolver,
    n: usize,
    m: usize,
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    is_active: Vec<bool>,
    iterations: usize,
    blocking: Option<usize>,
    scratch_d: DVector<f64>,
}

impl<'a> Workspace<'a> {
    fn new(solver: &'a DenseQpSolver, qp: &'a QuadraticProgram) -> Self {
        let n = solver.n;
        let m = qp.num_rows();
        let x = -solver.chol.solve(&qp.g);
        Self {
            qp,
            solver,
            n,
            m,
            x,
            j: solver.j0.clone(),
            r: DMatrix::zeros(n, n),
            active: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            is_active: vec![false; m + 2 * n],
            iterations: 0,
            blocking: None,
            scratch_d: DVector::zeros(n),
        }
    }

    fn normal(&self, idx: usize) -> Normal {
        if idx < self.m {
            Normal::Row(idx)
        } else if idx < self.m + self.n {
            Normal::Lower(idx - self.m)
        } else {
            Normal::Upper(idx - self.m - self.n)
        }
    }

    fn rhs(&self, idx: usize) -> f64 {
        match self.normal(idx) {
            Normal::Row(i) => self.qp.b_ineq[i],
            Normal::Lower(i) => self.qp.lb[i],
            Normal::Upper(i) => -self.qp.ub[i],
        }
    }

    fn exists(&self, idx: usize) -> bool {
        match self.normal(idx) {
            Normal::Row(_) => true,
            Normal::Lower(i) => self.qp.lb[i].is_finite(),
            Normal::Upper(i) => self.qp.ub[i].is_finite(),
        }
    }

    fn dot_normal(&self, idx: usize, v: &DVector<f64>) -> f64 {
        match self.normal(idx) {
            Normal::Row(i) => self.qp.a_ineq.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum(),
            Normal::Lower(i) => v[i],
            Normal::Upper(i) => -v[i],
        }
    }

    fn slack(&self, idx: usize) -> f64 {
        self.dot_normal(idx, &self.x) - self.rhs(idx)
    }

    /// Scale used to judge violations of one constraint.
    fn tol_for(&self, idx: usize) -> f64 {
        let norm = match self.normal(idx) {
            Normal::Row(i) => self.qp.a_ineq.row(i).amax(),
            _ => 1.0,
        };
        1e-10 * (1.0 + self.rhs(idx).abs()).max(norm)
    }

    /// Constraints tight at a warm-start point.
    fn active_at(&self, w: &DVector<f64>) -> Vec<usize> {
        (0..self.m + 2 * self.n)
            .filter(|&i| self.exists(i))
            .filter(|&i| (self.dot_normal(i, w) - self.rhs(i)).abs() <= 1e-7 * (1.0 + self.rhs(i).abs()))
            .collect()
    }

    fn most_violated(&self, candidates: impl Iterator<Item = usize>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in candidates {
            if self.is_active[i] || !self.exists(i) {
                continue;
            }
            let s = self.slack(i);
            if s < -self.tol_for(i) && best.map_or(true, |(_, bs)| s < bs) {
                best = Some((i, s));
            }
        }
        best
    }

    fn run(&mut self, preferred: &[usize], max_iter: usize) -> QpStatus {
        let total = self.m + 2 * self.n;
        loop {
            let pick = self
                .most_violated(preferred.iter().copied())
                .or_else(|| self.most_violated(0..total));
            let Some((p, _)) = pick else {
                return QpStatus::Optimal;
            };
            let mut up = 0.0;
            loop {
                if self.iterations >= max_iter {
                    return QpStatus::MaxIterations;
                }
                self.iterations += 1;
                let q = self.active.len();
                self.compute_d(p);
                let d = &self.scratch_d;
                let dnorm2: f64 = d.iter().map(|v| v * v).sum();
                let d2norm2: f64 = d.iter().skip(q).map(|v| v * v).sum();
                // Primal direction z = J2 d2.
                let has_primal = d2norm2 > 1e-20 * dnorm2.max(1e-300);
                let z = if has_primal {
                    let mut z = DVector::zeros(self.n);
                    for c in q..self.n {
                        z.axpy(d[c], &self.j.column(c), 1.0);
                    }
                    Some(z)
                } else {
                    None
                };
                // Dual direction r = R^{-1} d1.
                let r = self.back_substitute(q);
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, &rk) in r.iter().enumerate() {
                    if rk > 0.0 {
                        let ratio = self.u[k] / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(k);
                        }
                    }
                }
                let sp = self.slack(p);
                let t2 = match &z {
                    Some(z) => {
                        let znp = self.dot_normal(p, z);
                        if znp > 0.0 {
                            -sp / znp
                        } else {
                            f64::INFINITY
                        }
                    }
                    None => f64::INFINITY,
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    self.blocking = Some(p);
                    return QpStatus::PrimalInfeasible;
                }
                for (k, rk) in r.iter().enumerate() {
                    self.u[k] -= t * rk;
                }
                up += t;
                if let Some(z) = z.filter(|_| t2.is_finite()) {
                    self.x.axpy(t, &z, 1.0);
                    if t2 <= t1 {
                        self.add_constraint(p, up);
                        break;
                    }
                }
                let l = drop_at.expect("partial step without a blocking multiplier");
                self.drop_constraint(l);
            }
        }
    }

    fn compute_d(&mut self, p: usize) {
        match self.normal(p) {
            Normal::Row(i) => {
                let row = self.qp.a_ineq.row(i);
                let jt = self.j.tr_mul(&row.transpose());
                self.scratch_d.copy_from(&jt);
            }
            Normal::Lower(i) => {
                for c in 0..self.n {
                    self.scratch_d[c] = self.j[(i, c)];
                }
            }
            Normal::Upper(i) => {
                for c in 0..self.n {
                    self.scratch_d[c] = -self.j[(i, c)];
                }
            }
        }
    }

    fn back_substitute(&self, q: usize) -> Vec<f64> {
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = self.scratch_d[i];
            for k in i + 1..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for i in 0..self.n {
            let t1 = self.j[(i, a)];
            let t2 = self.j[(i, b)];
            self.j[(i, a)] = c * t1 + s * t2;
            self.j[(i, b)] = -s * t1 + c * t2;
        }
    }

    fn add_constraint(&mut self, p: usize, multiplier: f64) {
        let q = self.active.len();
        for jj in (q + 1..self.n).rev() {
            let (a, b) = (self.scratch_d[jj - 1], self.scratch_d[jj]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            self.scratch_d[jj - 1] = h;
            self.scratch_d[jj] = 0.0;
            self.rotate_j(jj - 1, jj, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = self.scratch_d[i];
        }
        self.active.push(p);
        self.u.push(multiplier);
        self.is_active[p] = true;
    }

    fn drop_constraint(&mut self, l: usize) {
        let q = self.active.len();
        let idx = self.active.remove(l);
        self.u.remove(l);
        self.is_active[idx] = false;
        // Shift columns of R left.
        for c in l..q - 1 {
            for i in 0..q {
                self.r[(i, c)] = self.r[(i, c + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        // Restore triangularity.
        for jj in l..q - 1 {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for k in jj..q - 1 {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = c * t1 + s * t2;
                self.r[(jj + 1, k)] = -s * t1 + c * t2;
            }
            self.r[(jj + 1, jj)] = 0.0;
            self.rotate_j(jj, jj + 1, c, s);
        }
    }

    /// Recompute x and multipliers from the current active set by solving the
    /// equality-constrained subproblem directly.
    fn refine(&mut self) {
        let q = self.active.len();
        let n = self.n;
        let mut kkt = DMatrix::zeros(n + q, n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.solver.h);
        let mut rhs = DVector::zeros(n + q);
        rhs.rows_mut(0, n).copy_from(&(-&self.qp.g));
        for (k, &idx) in self.active.iter().enumerate() {
            let mut col = DVector::zeros(n);
            match self.normal(idx) {
                Normal::Row(i) => col.copy_from(&self.qp.a_ineq.row(i).transpose()),
                Normal::Lower(i) => col[i] = 1.0,
                Normal::Upper(i) => col[i] = -1.0,
            }
            for i in 0..n {
                kkt[(i, n + k)] = -col[i];
                kkt[(n + k, i)] = col[i];
            }
            rhs[n + k] = self.rhs(idx);
        }
        if let Some(sol) = kkt.lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                self.x.copy_from(&sol.rows(0, n));
                for k in 0..q {
                    self.u[k] = sol[n + k].max(0.0);
                }
            }
        }
    }

    fn multipliers(&self) -> Multipliers {
        let mut mult = Multipliers::zeros(self.n, self.m);
        for (&idx, &lam) in self.active.iter().zip(&self.u) {
            match self.normal(idx) {
                Normal::Row(i) => mult.ineq[i] = lam,
                Normal::Lower(i) => mult.lower[i] = lam,
                Normal::Upper(i) => mult.upper[i] = lam,
            }
        }
        mult
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unconstrained_scalar() {
        let qp = QuadraticProgram::unconstrained(DMatrix::from_element(1, 1, 2.0), v(&[-2.0]));
        let sol = solve(&qp, None, 1e-6, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!(sol.kkt_residual <= 1e-12);
    }

    #[test]
    fn clipped_by_upper_bound() {
        let qp = QuadraticProgram::unconstrained(DMatrix::from_element(1, 1, 2.0), v(&[-2.0]))
            .with_bounds(v(&[f64::NEG_INFINITY]), v(&[0.5]));
        let sol = solve(&qp, None, 1e-6, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 0.5).abs() < 1e-12);
        assert!((sol.multipliers.upper[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_feasible_set() {
        // x >= 1 and x <= 0.
        let qp = QuadraticProgram::unconstrained(DMatrix::from_element(1, 1, 1.0), v(&[0.0]))
            .with_bounds(v(&[f64::NEG_INFINITY]), v(&[0.0]))
            .with_rows(DMatrix::from_element(1, 1, 1.0), v(&[1.0]));
        let sol = solve(&qp, None, 1e-6, 100).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
        assert!(sol.blocking_constraint.is_some());
    }

    #[test]
    fn rejects_malformed() {
        let qp = QuadraticProgram::unconstrained(DMatrix::from_element(2, 2, 1.0), v(&[0.0]));
        assert!(matches!(solve(&qp, None, 1e-6, 10), Err(Error::InvalidProblem(_))));
        let qp = QuadraticProgram::unconstrained(DMatrix::from_element(1, 1, 1.0), v(&[f64::NAN]));
        assert!(matches!(solve(&qp, None, 1e-6, 10), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn semidefinite_hessian_is_regularized() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let qp = QuadraticProgram::unconstrained(h.clone(), v(&[-1.0, 1.0]))
            .with_bounds(v(&[-2.0, -2.0]), v(&[2.0, 2.0]));
        let solver = DenseQpSolver::new(&h).unwrap();
        assert!(solver.is_regularized());
        let sol = solver.solve(&qp, None, 1e-6, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-6);
        assert!((sol.z[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn residual_of_perturbed_optimum() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let g = v(&[1.0, -1.0]);
        let qp = QuadraticProgram::unconstrained(h.clone(), g);
        let sol = solve(&qp, None, 1e-6, 100).unwrap();
        let zero = Multipliers::zeros(2, 0);
        assert!(kkt_residual(&qp, &sol.z, &zero) <= 1e-12);
        let delta = v(&[0.1, 0.0]);
        let res = kkt_residual(&qp, &(&sol.z + &delta), &zero);
        assert!((res - (&h * &delta).amax()).abs() < 1e-12);
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let qp = QuadraticProgram::unconstrained(DMatrix::zeros(3, 3), DVector::zeros(3))
            .with_bounds(v(&[-1.0; 3]), v(&[1.0; 3]));
        assert_eq!(kkt_residual(&qp, &v(&[0.2, -0.5, 1.0]), &Multipliers::zeros(3, 0)), 0.0);
    }

    #[test]
    fn degenerate_equal_bounds() {
        let qp = QuadraticProgram::unconstrained(DMatrix::identity(2, 2), v(&[-1.0, -1.0]))
            .with_bounds(v(&[0.3, -1.0]), v(&[0.3, 1.0]))
            .with_rows(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[0.0]));
        let sol = solve(&qp, None, 1e-6, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 0.3).abs() < 1e-12);
        assert!((sol.z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warm_start_reproduces_optimum() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let qp = QuadraticProgram::unconstrained(h, v(&[-8.0, -6.0, -4.0]))
            .with_bounds(v(&[-1.0; 3]), v(&[1.0; 3]))
            .with_rows(DMatrix::from_row_slice(1, 3, &[-1.0, -1.0, -1.0]), v(&[-1.5]));
        let cold = solve(&qp, None, 1e-6, 100).unwrap();
        let warm = solve(&qp, Some(&cold.z), 1e-6, 100).unwrap();
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!((warm.objective - cold.objective).abs() < 1e-8);
        assert!(warm.iterations <= cold.iterations);
    }
}
