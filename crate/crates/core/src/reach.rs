//! Reachable sets of the MAV and of the human body, and the geometric queries
//! the safety constraint is built from.
//!
//! The MAV set is an exact zonotope under the linear model and box-bounded
//! inputs. Human sets are conservative: each skeleton primitive is inflated by
//! the worst-case displacement of a double integrator with bounded velocity
//! and acceleration.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    ControlBounds, ControlInput, StackedDynamics, StateVector, INPUT_DIM, POSITION_ROWS, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::humans::{HumanFrame, NUM_JOINTS};

pub type Point3 = Vector3<f64>;

/// `{ c + G xi : |xi|_inf <= 1 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    pub center: DVector<f64>,
    pub generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() && generators.ncols() > 0 {
            return Err(Error::InvalidParameter(format!(
                "generator rows {} do not match center dimension {}",
                generators.nrows(),
                center.len()
            )));
        }
        let generators =
            if generators.ncols() == 0 { DMatrix::zeros(center.len(), 0) } else { generators };
        Ok(Self { center, generators })
    }

    pub fn point(center: DVector<f64>) -> Self {
        let d = center.len();
        Self { center, generators: DMatrix::zeros(d, 0) }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    /// `sup { n'x : x in Z } = n'c + |G'n|_1`.
    pub fn support(&self, n: &DVector<f64>) -> Result<f64> {
        if n.len() != self.dim() || n.iter().any(|v| !v.is_finite()) || n.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidDirection);
        }
        Ok(self.center.dot(n) + self.generator_extent(n))
    }

    /// `|G'n|_1`, the half-width of the set along `n`.
    pub fn generator_extent(&self, n: &DVector<f64>) -> f64 {
        self.generators.column_iter().map(|g| g.dot(n).abs()).sum()
    }

    /// Axis-aligned half extents `|G| 1`.
    pub fn half_extents(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim());
        for g in self.generators.column_iter() {
            for i in 0..self.dim() {
                e[i] += g[i].abs();
            }
        }
        e
    }

    pub fn eval(&self, xi: &[f64]) -> DVector<f64> {
        let mut x = self.center.clone();
        for (g, &s) in self.generators.column_iter().zip(xi) {
            x.axpy(s, &g, 1.0);
        }
        x
    }

    /// Same set with zero generators removed and parallel generators merged.
    pub fn reduced(&self) -> Zonotope {
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for g in self.generators.column_iter() {
            let norm = g.norm();
            if norm <= 1e-14 {
                continue;
            }
            let unit = g / norm;
            let mut merged = false;
            for k in kept.iter_mut() {
                let kn = k.norm();
                let cos = k.dot(&unit) / kn;
                if (cos.abs() - 1.0).abs() <= 1e-12 {
                    *k += if cos > 0.0 { g.clone_owned() } else { -g.clone_owned() };
                    merged = true;
                    break;
                }
            }
            if !merged {
                kept.push(g.clone_owned());
            }
        }
        let gens = if kept.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&kept)
        };
        Zonotope { center: self.center.clone(), generators: gens }
    }

    /// All `2^m` sign combinations of the generators. Only for small `m`.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let m = self.num_generators();
        assert!(m <= 20, "vertex enumeration over {m} generators");
        (0..1usize << m)
            .map(|mask| {
                let xi: Vec<f64> =
                    (0..m).map(|i| if mask & (1 << i) != 0 { 1.0 } else { -1.0 }).collect();
                self.eval(&xi)
            })
            .collect()
    }
}

pub fn support(z: &Zonotope, n: &DVector<f64>) -> Result<f64> {
    z.support(n)
}

fn check_step(stacked: &StackedDynamics, k: usize) -> Result<()> {
    if k == 0 || k > stacked.horizon {
        return Err(Error::InvalidStep(k));
    }
    Ok(())
}

fn position_rows<const C: usize>(m: &SMatrix<f64, STATE_DIM, C>) -> SMatrix<f64, 3, C> {
    SMatrix::<f64, 3, C>::from_fn(|r, c| m[(POSITION_ROWS[r], c)])
}

/// Position projection of the MAV reachable set at step `k` given `u0`.
pub fn mav_reachable(
    stacked: &StackedDynamics,
    x0: &StateVector,
    u0: &ControlInput,
    bounds: &ControlBounds,
    k: usize,
) -> Result<Zonotope> {
    check_step(stacked, k)?;
    let uc = bounds.center();
    let eu = bounds.half_range();
    let mut c = stacked.a_pow(k) * x0 + stacked.a_pow_b(k - 1) * u0.to_vector();
    for j in 0..k.saturating_sub(1) {
        c += stacked.a_pow_b(j) * uc;
    }
    let mut gens = Vec::new();
    for j in (0..k.saturating_sub(1)).rev() {
        let m = position_rows(stacked.a_pow_b(j));
        for col in 0..INPUT_DIM {
            gens.push(DVector::from_iterator(3, m.column(col).iter().map(|v| v * eu[col])));
        }
    }
    let center = DVector::from_iterator(3, POSITION_ROWS.iter().map(|&r| c[r]));
    let g = if gens.is_empty() { DMatrix::zeros(3, 0) } else { DMatrix::from_columns(&gens) };
    Zonotope::new(center, g)
}

/// Per-step quantities of the MAV reachable set that do not depend on the
/// state or `u0`, cached for constraint assembly.
#[derive(Debug, Clone)]
pub struct MavReach {
    pub horizon: usize,
    pub bounds: ControlBounds,
    /// `P A^k` for `k = 0..=T`.
    pos_a_pow: Vec<SMatrix<f64, 3, STATE_DIM>>,
    /// `P A^j B` for `j = 0..T`.
    pos_a_pow_b: Vec<Matrix3<f64>>,
    /// `sum_{j=0}^{k-2} P A^j B u_c`, indexed by `k`.
    drift: Vec<Point3>,
    /// Generators of the position zonotope at step `k` (3 x 3(k-1)).
    generators: Vec<DMatrix<f64>>,
}

impl MavReach {
    pub fn new(stacked: &StackedDynamics, bounds: &ControlBounds) -> Self {
        let t = stacked.horizon;
        let uc = bounds.center();
        let eu = bounds.half_range();
        let pos_a_pow: Vec<_> = (0..=t).map(|k| position_rows(stacked.a_pow(k))).collect();
        let pos_a_pow_b: Vec<Matrix3<f64>> =
            (0..t).map(|j| position_rows(stacked.a_pow_b(j))).collect();
        let mut drift = vec![Point3::zeros(); t + 1];
        for k in 2..=t {
            drift[k] = drift[k - 1] + pos_a_pow_b[k - 2] * uc;
        }
        let scaled: Vec<Matrix3<f64>> = pos_a_pow_b
            .iter()
            .map(|m| Matrix3::from_fn(|r, c| m[(r, c)] * eu[c]))
            .collect();
        let mut generators = vec![DMatrix::zeros(3, 0); t + 1];
        for k in 2..=t {
            let mut g = DMatrix::zeros(3, 3 * (k - 1));
            for (slot, j) in (0..k - 1).rev().enumerate() {
                g.view_mut((0, 3 * slot), (3, 3)).copy_from(&scaled[j]);
            }
            generators[k] = g;
        }
        Self { horizon: t, bounds: *bounds, pos_a_pow, pos_a_pow_b, drift, generators }
    }

    fn check(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.horizon {
            return Err(Error::InvalidStep(k));
        }
        Ok(())
    }

    /// Map from `u0` to the step-`k` position, `P A^{k-1} B`.
    pub fn u0_map(&self, k: usize) -> &Matrix3<f64> {
        &self.pos_a_pow_b[k - 1]
    }

    /// Position part of the center independent of `u0`:
    /// `P A^k x0 + sum_{j<=k-2} P A^j B u_c`.
    pub fn offset(&self, x0: &StateVector, k: usize) -> Point3 {
        self.pos_a_pow[k] * x0 + self.drift[k]
    }

    /// Center of the step-`k` set when `u0` sits at the box center. Used as
    /// the query point for the separating hyperplane so that the constraint
    /// stays linear in `u0`.
    pub fn reference_center(&self, x0: &StateVector, k: usize) -> Point3 {
        self.offset(x0, k) + self.u0_map(k) * self.bounds.center()
    }

    /// `|G_k' n|_1`.
    pub fn extent(&self, k: usize, n: &Point3) -> f64 {
        self.generators[k].column_iter().map(|g| (g[0] * n.x + g[1] * n.y + g[2] * n.z).abs()).sum()
    }

    pub fn generators(&self, k: usize) -> &DMatrix<f64> {
        &self.generators[k]
    }

    pub fn zonotope(&self, x0: &StateVector, u0: &ControlInput, k: usize) -> Result<Zonotope> {
        self.check(k)?;
        let c = self.offset(x0, k) + self.u0_map(k) * u0.to_vector();
        Zonotope::new(DVector::from_column_slice(c.as_slice()), self.generators[k].clone())
    }
}

/// Body segment class selecting a base radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentClass {
    Head,
    Torso,
    Arm,
    Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SkeletonElement {
    Capsule { a: usize, b: usize, class: SegmentClass },
    Sphere { joint: usize, class: SegmentClass },
}

impl SkeletonElement {
    pub fn joints(&self) -> Vec<usize> {
        match *self {
            SkeletonElement::Capsule { a, b, .. } => vec![a, b],
            SkeletonElement::Sphere { joint, .. } => vec![joint],
        }
    }

    pub fn class(&self) -> SegmentClass {
        match *self {
            SkeletonElement::Capsule { class, .. } | SkeletonElement::Sphere { class, .. } => class,
        }
    }
}

/// Assignment of body primitives to the 24-joint skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonMap {
    pub elements: Vec<SkeletonElement>,
}

pub const SKELETON_PRIMITIVES: usize = 14;

impl Default for SkeletonMap {
    fn default() -> Self {
        use crate::humans::joint::*;
        use SegmentClass::*;
        use SkeletonElement::{Capsule, Sphere};
        Self {
            elements: vec![
                Capsule { a: PELVIS, b: SPINE3, class: Torso },
                Capsule { a: SPINE3, b: NECK, class: Torso },
                Capsule { a: L_SHOULDER, b: L_ELBOW, class: Arm },
                Capsule { a: R_SHOULDER, b: R_ELBOW, class: Arm },
                Capsule { a: L_ELBOW, b: L_WRIST, class: Arm },
                Capsule { a: R_ELBOW, b: R_WRIST, class: Arm },
                Capsule { a: L_HIP, b: L_KNEE, class: Arm },
                Capsule { a: R_HIP, b: R_KNEE, class: Arm },
                Capsule { a: L_KNEE, b: L_FOOT, class: Arm },
                Capsule { a: R_KNEE, b: R_FOOT, class: Arm },
                Sphere { joint: HEAD, class: Head },
                Sphere { joint: L_HAND, class: Hand },
                Sphere { joint: R_HAND, class: Hand },
                Sphere { joint: PELVIS, class: Torso },
            ],
        }
    }
}

impl SkeletonMap {
    pub fn validate(&self) -> Result<()> {
        if self.elements.len() != SKELETON_PRIMITIVES {
            return Err(Error::Config(format!(
                "skeleton map must have {SKELETON_PRIMITIVES} primitives, found {}",
                self.elements.len()
            )));
        }
        if self.elements.iter().flat_map(|e| e.joints()).any(|j| j >= NUM_JOINTS) {
            return Err(Error::Config("skeleton map references a joint index >= 24".into()));
        }
        Ok(())
    }
}

/// Parameters of the human reachable-set over-approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanReachParams {
    pub rho_head: f64,
    pub rho_torso: f64,
    pub rho_arm: f64,
    pub rho_hand: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub r_mav: f64,
    pub arm_span: f64,
    pub t_switch: f64,
    /// Joints unobserved for longer than this are grown with `v0 = v_max`.
    pub staleness_cap: f64,
}

impl Default for HumanReachParams {
    fn default() -> Self {
        Self {
            rho_head: 0.2,
            rho_torso: 0.3,
            rho_arm: 0.205,
            rho_hand: 0.1,
            v_max: 1.0,
            a_max: 1.0,
            r_mav: 0.5,
            arm_span: 0.9,
            t_switch: 0.2,
            staleness_cap: 1.0,
        }
    }
}

impl HumanReachParams {
    pub fn base_radius(&self, class: SegmentClass) -> f64 {
        match class {
            SegmentClass::Head => self.rho_head,
            SegmentClass::Torso => self.rho_torso,
            SegmentClass::Arm => self.rho_arm,
            SegmentClass::Hand => self.rho_hand,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rho_head,
            self.rho_torso,
            self.rho_arm,
            self.rho_hand,
            self.v_max,
            self.a_max,
            self.r_mav,
            self.arm_span,
            self.t_switch,
            self.staleness_cap,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.v_max == 0.0 || self.a_max == 0.0 {
            return Err(Error::InvalidParameter("human reach parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Worst-case displacement after `t` seconds of a point starting at speed
/// `v0` with acceleration bounded by `a_max` and speed by `v_max`.
pub fn displacement_bound(t: f64, v0: f64, params: &HumanReachParams) -> f64 {
    let v0 = v0.clamp(0.0, params.v_max);
    let (a, vm) = (params.a_max, params.v_max);
    if v0 + a * t <= vm {
        v0 * t + 0.5 * a * t * t
    } else {
        let t_sat = (vm - v0) / a;
        (vm * vm - v0 * v0) / (2.0 * a) + vm * (t - t_sat)
    }
}

pub fn grow_radius(base_radius: f64, t: f64, v0: f64, params: &HumanReachParams) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("growth time must be >= 0, got {t}")));
    }
    Ok(base_radius + displacement_bound(t, v0, params))
}

/// Result of a closest-boundary query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub point: Point3,
    pub normal: Point3,
    /// Positive outside, negative inside.
    pub signed_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReachPrimitive {
    Sphere { center: Point3, radius: f64 },
    Capsule { a: Point3, b: Point3, radius: f64 },
    VerticalCylinder { axis_xy: Vector2<f64>, radius: f64, z_min: f64, z_max: f64 },
}

fn closest_on_segment(a: &Point3, b: &Point3, q: &Point3) -> Point3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 1e-24 {
        return *a;
    }
    let s = ((q - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * s
}

/// Outward normal of a ball around `core` seen from `q`, with a fixed
/// fallback when `q` coincides with the core point.
fn ball_normal(core: &Point3, q: &Point3, fallback: Point3) -> Point3 {
    let d = q - core;
    let n = d.norm();
    if n <= 1e-12 {
        fallback
    } else {
        d / n
    }
}

impl ReachPrimitive {
    pub fn radius(&self) -> f64 {
        match *self {
            ReachPrimitive::Sphere { radius, .. }
            | ReachPrimitive::Capsule { radius, .. }
            | ReachPrimitive::VerticalCylinder { radius, .. } => radius,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ReachPrimitive::Sphere { center, radius } => {
                center.iter().all(|v| v.is_finite()) && radius.is_finite()
            }
            ReachPrimitive::Capsule { a, b, radius } => {
                a.iter().chain(b.iter()).all(|v| v.is_finite()) && radius.is_finite()
            }
            ReachPrimitive::VerticalCylinder { axis_xy, radius, z_min, z_max } => {
                axis_xy.iter().all(|v| v.is_finite())
                    && radius.is_finite()
                    && z_min.is_finite()
                    && z_max.is_finite()
            }
        }
    }

    pub fn contains(&self, q: &Point3, tol: f64) -> bool {
        self.signed_distance(q) <= tol
    }

    pub fn signed_distance(&self, q: &Point3) -> f64 {
        self.closest_point_normal(q).signed_distance
    }

    /// Closest point of the (solid) primitive to `q`; `q` itself when inside.
    pub fn project(&self, q: &Point3) -> Point3 {
        match *self {
            ReachPrimitive::Sphere { center, radius } => {
                let d = q - center;
                let n = d.norm();
                if n <= radius {
                    *q
                } else {
                    center + d * (radius / n)
                }
            }
            ReachPrimitive::Capsule { a, b, radius } => {
                let s = closest_on_segment(&a, &b, q);
                let d = q - s;
                let n = d.norm();
                if n <= radius {
                    *q
                } else {
                    s + d * (radius / n)
                }
            }
            ReachPrimitive::VerticalCylinder { axis_xy, radius, z_min, z_max } => {
                let h = Vector2::new(q.x, q.y) - axis_xy;
                let rho = h.norm();
                let hp = if rho <= radius { h } else { h * (radius / rho) };
                Point3::new(axis_xy.x + hp.x, axis_xy.y + hp.y, q.z.clamp(z_min, z_max))
            }
        }
    }

    /// Nearest boundary point, outward normal there and signed distance.
    ///
    /// When `q` lies on a symmetry center the normal falls back to `+z`
    /// (or `+x` when `+z` is not a valid outward direction, such as along a
    /// vertical capsule axis or the side of a cylinder).
    pub fn closest_point_normal(&self, q: &Point3) -> BoundaryPoint {
        match *self {
            ReachPrimitive::Sphere { center, radius } => {
                let n = ball_normal(&center, q, Point3::z());
                BoundaryPoint {
                    point: center + n * radius,
                    normal: n,
                    signed_distance: (q - center).norm() - radius,
                }
            }
            ReachPrimitive::Capsule { a, b, radius } => {
                let s = closest_on_segment(&a, &b, q);
                let axis = b - a;
                let fallback = if axis.norm() <= 1e-12 {
                    Point3::z()
                } else {
                    let u = axis.normalize();
                    let perp = Point3::z() - u * u.z;
                    if perp.norm() > 1e-6 {
                        perp.normalize()
                    } else {
                        let perp = Point3::x() - u * u.x;
                        perp.normalize()
                    }
                };
                let n = ball_normal(&s, q, fallback);
                BoundaryPoint {
                    point: s + n * radius,
                    normal: n,
                    signed_distance: (q - s).norm() - radius,
                }
            }
            ReachPrimitive::VerticalCylinder { axis_xy, radius, z_min, z_max } => {
                let h = Vector2::new(q.x, q.y) - axis_xy;
                let rho = h.norm();
                let inside_radial = rho <= radius;
                let inside_z = q.z >= z_min && q.z <= z_max;
                if inside_radial && inside_z {
                    let d_side = radius - rho;
                    let d_top = z_max - q.z;
                    let d_bot = q.z - z_min;
                    if d_top < d_side && d_top <= d_bot {
                        BoundaryPoint {
                            point: Point3::new(q.x, q.y, z_max),
                            normal: Point3::z(),
                            signed_distance: -d_top,
                        }
                    } else if d_bot < d_side {
                        BoundaryPoint {
                            point: Point3::new(q.x, q.y, z_min),
                            normal: -Point3::z(),
                            signed_distance: -d_bot,
                        }
                    } else {
                        let dir = if rho <= 1e-12 { Vector2::x() } else { h / rho };
                        let p = axis_xy + dir * radius;
                        BoundaryPoint {
                            point: Point3::new(p.x, p.y, q.z),
                            normal: Point3::new(dir.x, dir.y, 0.0),
                            signed_distance: -d_side,
                        }
                    }
                } else {
                    let p = self.project(q);
                    let d = q - p;
                    let dist = d.norm();
                    BoundaryPoint { point: p, normal: d / dist, signed_distance: dist }
                }
            }
        }
    }

    /// Boundary point maximizing `n' x` over the primitive, with `n` as its
    /// (not necessarily unique) outward normal. `n` must be a unit vector.
    pub fn support_point(&self, n: &Point3) -> BoundaryPoint {
        let point = match *self {
            ReachPrimitive::Sphere { center, radius } => center + n * radius,
            ReachPrimitive::Capsule { a, b, radius } => (if n.dot(&a) >= n.dot(&b) { a } else { b }) + n * radius,
            ReachPrimitive::VerticalCylinder { axis_xy, radius, z_min, z_max } => {
                let h = Vector2::new(n.x, n.y);
                let r = h.norm();
                let xy = if r <= 1e-12 { axis_xy } else { axis_xy + h * (radius / r) };
                Point3::new(xy.x, xy.y, if n.z >= 0.0 { z_max } else { z_min })
            }
        };
        BoundaryPoint { point, normal: *n, signed_distance: 0.0 }
    }

    /// Supporting hyperplanes worth trying for a query point: the closest
    /// boundary point first, then for a cylinder one point on each face.
    pub fn supporting_candidates(&self, q: &Point3) -> Vec<BoundaryPoint> {
        let mut out = vec![self.closest_point_normal(q)];
        if let ReachPrimitive::VerticalCylinder { axis_xy, radius, z_min, z_max } = *self {
            let h = Vector2::new(q.x, q.y) - axis_xy;
            let rho = h.norm();
            let dir = if rho <= 1e-12 { Vector2::x() } else { h / rho };
            let side = axis_xy + dir * radius;
            let disk = if rho <= radius { Vector2::new(q.x, q.y) } else { axis_xy + dir * radius };
            let zc = q.z.clamp(z_min, z_max);
            out.push(BoundaryPoint {
                point: Point3::new(side.x, side.y, zc),
                normal: Point3::new(dir.x, dir.y, 0.0),
                signed_distance: rho - radius,
            });
            out.push(BoundaryPoint {
                point: Point3::new(disk.x, disk.y, z_max),
                normal: Point3::z(),
                signed_distance: q.z - z_max,
            });
            out.push(BoundaryPoint {
                point: Point3::new(disk.x, disk.y, z_min),
                normal: -Point3::z(),
                signed_distance: z_min - q.z,
            });
        }
        out
    }
}

/// Signed set distance between a 3D zonotope and a primitive: the negative
/// containment depth when the zonotope lies inside, otherwise the minimum
/// distance between the sets (zero when they overlap).
pub fn set_distance(z: &Zonotope, prim: &ReachPrimitive) -> f64 {
    let pt = |v: &DVector<f64>| Point3::new(v[0], v[1], v[2]);
    let reduced = z.reduced();
    if reduced.num_generators() == 0 {
        return prim.signed_distance(&pt(&reduced.center));
    }
    // Containment and depth are decided at the vertices: the distance to the
    // boundary is concave inside a convex set.
    let contained_depth = if reduced.num_generators() <= 14 {
        let mut worst = f64::NEG_INFINITY;
        for v in reduced.vertices() {
            worst = worst.max(prim.signed_distance(&pt(&v)));
            if worst > 0.0 {
                break;
            }
        }
        (worst <= 0.0).then_some(worst)
    } else {
        // Interval hull: sufficient for containment, depth is approximate.
        let e = reduced.half_extents();
        let hull = Zonotope {
            center: reduced.center.clone(),
            generators: DMatrix::from_diagonal(&e),
        };
        let worst = hull.vertices().iter().map(|v| prim.signed_distance(&pt(v))).fold(f64::NEG_INFINITY, f64::max);
        (worst <= 0.0).then_some(worst)
    };
    if let Some(d) = contained_depth {
        return d;
    }
    min_distance(&reduced, prim)
}

/// `min_{x in Z} dist(x, prim)` by accelerated projected gradient over the
/// generator coefficients.
fn min_distance(z: &Zonotope, prim: &ReachPrimitive) -> f64 {
    let m = z.num_generators();
    let g = &z.generators;
    let lip = g.norm_squared().max(1e-12);
    let point_of = |xi: &DVector<f64>| {
        let x = &z.center + g * xi;
        Point3::new(x[0], x[1], x[2])
    };
    let dist = |xi: &DVector<f64>| {
        let p = point_of(xi);
        (p - prim.project(&p)).norm()
    };
    let mut xi = DVector::zeros(m);
    let mut y = xi.clone();
    let mut t = 1.0f64;
    let mut best = dist(&xi);
    for _ in 0..400 {
        if best <= 1e-12 {
            return 0.0;
        }
        let p = point_of(&y);
        let r = p - prim.project(&p);
        let grad = g.transpose() * DVector::from_column_slice(r.as_slice());
        let next = (&y - grad / lip).map(|v| v.clamp(-1.0, 1.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &xi) * ((t - 1.0) / t_next);
        xi = next;
        t = t_next;
        best = best.min(dist(&xi));
    }
    best
}

/// Per-joint kinematic summary of an observation used to grow primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanObservation {
    pub frame: HumanFrame,
    /// Upper bound on each joint's current speed (m/s).
    pub joint_speed: [f64; NUM_JOINTS],
}

impl HumanObservation {
    /// Observation with every joint assumed to move at `v_max`.
    pub fn conservative(frame: HumanFrame, params: &HumanReachParams) -> Self {
        Self { frame, joint_speed: [params.v_max; NUM_JOINTS] }
    }

    /// Estimate joint speeds by finite differences of the last two distinct
    /// observations of each joint, padded by the speed change the acceleration
    /// bound allows over that interval. Joints without two observations get
    /// `v_max`.
    pub fn from_history(history: &[HumanFrame], params: &HumanReachParams) -> Option<Self> {
        let current = history.last()?.clone();
        let mut joint_speed = [params.v_max; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let t1 = current.observed_at[j];
            let p1 = current.joints[j];
            let prev = history
                .iter()
                .rev()
                .find(|f| f.observed_at[j] < t1 - 1e-9)
                .map(|f| (f.observed_at[j], f.joints[j]));
            if let Some((t0, p0)) = prev {
                let dt = t1 - t0;
                let v = (p1 - p0).norm() / dt + params.a_max * dt;
                joint_speed[j] = v.min(params.v_max);
            }
        }
        Some(Self { frame: current, joint_speed })
    }

    pub fn unobserved(&self, joint: usize) -> f64 {
        (self.frame.t - self.frame.observed_at[joint]).max(0.0)
    }

    /// Effective growth time and initial speed for one joint at lead time `t`.
    fn growth(&self, joint: usize, t: f64, params: &HumanReachParams) -> (f64, f64) {
        let stale = self.unobserved(joint);
        let v0 = if stale > params.staleness_cap { params.v_max } else { self.joint_speed[joint] };
        (t + stale, v0)
    }

    fn displacement(&self, joint: usize, t: f64, params: &HumanReachParams) -> f64 {
        let (tt, v0) = self.growth(joint, t, params);
        displacement_bound(tt, v0, params)
    }
}

/// Skeleton-following primitives grown to lead time `t`.
pub fn complex_set(
    obs: &HumanObservation,
    t: f64,
    skeleton: &SkeletonMap,
    params: &HumanReachParams,
) -> Result<Vec<ReachPrimitive>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("lead time must be >= 0, got {t}")));
    }
    let joints = &obs.frame.joints;
    Ok(skeleton
        .elements
        .iter()
        .map(|el| {
            let base = params.base_radius(el.class()) + params.r_mav;
            let grow = el
                .joints()
                .into_iter()
                .map(|j| obs.displacement(j, t, params))
                .fold(0.0, f64::max);
            match *el {
                SkeletonElement::Capsule { a, b, .. } => {
                    ReachPrimitive::Capsule { a: joints[a], b: joints[b], radius: base + grow }
                }
                SkeletonElement::Sphere { joint, .. } => {
                    ReachPrimitive::Sphere { center: joints[joint], radius: base + grow }
                }
            }
        })
        .collect())
}

/// Single vertical cylinder around the root joint grown to lead time `t`.
pub fn simplified_set(obs: &HumanObservation, t: f64, params: &HumanReachParams) -> ReachPrimitive {
    use crate::humans::joint::PELVIS;
    let joints = &obs.frame.joints;
    let root = joints[PELVIS];
    let axis_xy = Vector2::new(root.x, root.y);
    let reach_xy = joints
        .iter()
        .map(|p| (Vector2::new(p.x, p.y) - axis_xy).norm())
        .fold(params.arm_span, f64::max);
    let grow_root = obs.displacement(PELVIS, t, params);
    let grow_any = (0..NUM_JOINTS).map(|j| obs.displacement(j, t, params)).fold(0.0, f64::max);
    let z_lo = joints.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_hi = joints.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    ReachPrimitive::VerticalCylinder {
        axis_xy,
        radius: grow_root + reach_xy + params.r_mav,
        z_min: z_lo - grow_any - params.r_mav,
        z_max: z_hi + grow_any + params.r_mav,
    }
}

/// Which human over-approximation to use along the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SetRegime {
    /// Skeleton primitives before the switching time, cylinder after.
    #[default]
    Hybrid,
    Complex,
    Simplified,
}

/// Human reachable set over a horizon; `steps[k - 1]` holds step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanReachableSet {
    pub steps: Vec<Vec<ReachPrimitive>>,
    pub source_time: f64,
}

impl HumanReachableSet {
    pub fn step(&self, k: usize) -> &[ReachPrimitive] {
        &self.steps[k - 1]
    }

    pub fn num_primitives(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }
}

/// Whether step `k` uses the skeleton model under the hybrid rule.
pub fn is_complex_step(k: usize, ts: f64, t_switch: f64) -> bool {
    (k as f64) * ts < t_switch - 1e-9
}

pub fn hybrid_set(
    obs: &HumanObservation,
    horizon: usize,
    ts: f64,
    skeleton: &SkeletonMap,
    params: &HumanReachParams,
    regime: SetRegime,
) -> Result<HumanReachableSet> {
    if horizon == 0 {
        return Err(Error::InvalidHorizon(0));
    }
    // The switch time never exceeds the horizon duration.
    let t_switch = params.t_switch.min(horizon as f64 * ts);
    let steps = (1..=horizon)
        .map(|k| {
            let t = k as f64 * ts;
            let complex = match regime {
                SetRegime::Hybrid => is_complex_step(k, ts, t_switch),
                SetRegime::Complex => true,
                SetRegime::Simplified => false,
            };
            if complex {
                complex_set(obs, t, skeleton, params)
            } else {
                Ok(vec![simplified_set(obs, t, params)])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HumanReachableSet { steps, source_time: obs.frame.t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_model, stack, ModelParams};
    use crate::humans::{joint, standing_pose};
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn support_unit_box() {
        let z = Zonotope::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(z.support(&v(&[1.0, 1.0])).unwrap(), 2.0);
        let z = Zonotope::new(v(&[1.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]))
            .unwrap();
        assert_eq!(z.support(&v(&[0.0, 1.0])).unwrap(), 2.0);
        assert!(matches!(z.support(&v(&[0.0, 0.0])), Err(Error::InvalidDirection)));
    }

    #[test]
    fn reduced_merges_parallel_generators() {
        let g = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, -2.0, 0.0, 0.0, 0.0]);
        let z = Zonotope::new(v(&[0.0, 0.0]), g).unwrap();
        let r = z.reduced();
        assert_eq!(r.num_generators(), 1);
        assert_eq!(r.half_extents(), v(&[3.0, 0.0]));
    }

    #[test]
    fn growth_closed_form() {
        let p = HumanReachParams::default();
        assert_eq!(grow_radius(0.3, 0.0, 0.4, &p).unwrap(), 0.3);
        assert_abs_diff_eq!(grow_radius(0.3, 0.5, 1.0, &p).unwrap(), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(grow_radius(0.0, 2.0, 0.0, &p).unwrap(), 1.5, epsilon = 1e-15);
        assert!(grow_radius(0.3, -0.1, 0.0, &p).is_err());
    }

    #[test]
    fn sphere_queries() {
        let s = ReachPrimitive::Sphere { center: Point3::zeros(), radius: 1.0 };
        let b = s.closest_point_normal(&Point3::new(3.0, 0.0, 0.0));
        assert_eq!(b.point, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(b.normal, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(b.signed_distance, 2.0);
        let b = s.closest_point_normal(&Point3::new(0.5, 0.0, 0.0));
        assert_eq!(b.signed_distance, -0.5);
        assert_eq!(b.normal, Point3::x());
        let b = s.closest_point_normal(&Point3::zeros());
        assert_eq!(b.normal, Point3::z());
    }

    #[test]
    fn capsule_queries() {
        let c = ReachPrimitive::Capsule { a: Point3::zeros(), b: Point3::z(), radius: 0.3 };
        let b = c.closest_point_normal(&Point3::new(1.0, 0.0, 0.5));
        assert_abs_diff_eq!(b.point, Point3::new(0.3, 0.0, 0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(b.signed_distance, 0.7, epsilon = 1e-15);
        // On the axis of a vertical capsule the fallback must be horizontal.
        let b = c.closest_point_normal(&Point3::new(0.0, 0.0, 0.5));
        assert_eq!(b.normal, Point3::x());
        assert_abs_diff_eq!(b.signed_distance, -0.3, epsilon = 1e-15);
    }

    #[test]
    fn cylinder_queries() {
        let c = ReachPrimitive::VerticalCylinder {
            axis_xy: Vector2::zeros(),
            radius: 1.0,
            z_min: 0.0,
            z_max: 2.0,
        };
        let b = c.closest_point_normal(&Point3::new(2.0, 0.0, 1.0));
        assert_eq!(b.signed_distance, 1.0);
        assert_eq!(b.normal, Point3::x());
        let b = c.closest_point_normal(&Point3::new(0.0, 0.0, 1.9));
        assert_abs_diff_eq!(b.signed_distance, -0.1, epsilon = 1e-12);
        assert_eq!(b.normal, Point3::z());
        let b = c.closest_point_normal(&Point3::new(0.0, 0.0, 1.0));
        assert_eq!(b.normal, Point3::x());
        assert_eq!(b.signed_distance, -1.0);
        let b = c.closest_point_normal(&Point3::new(0.0, 0.0, 3.0));
        assert_eq!(b.point, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn set_distance_point_cases() {
        let s = ReachPrimitive::Sphere { center: Point3::zeros(), radius: 1.0 };
        assert_eq!(set_distance(&Zonotope::point(v(&[0.0, 0.0, 0.0])), &s), -1.0);
        assert_eq!(set_distance(&Zonotope::point(v(&[3.0, 0.0, 0.0])), &s), 2.0);
        // Box straddling the surface overlaps: distance zero.
        let z = Zonotope::new(v(&[1.0, 0.0, 0.0]), DMatrix::identity(3, 3) * 0.2).unwrap();
        assert!(set_distance(&z, &s).abs() < 1e-9);
    }

    fn obs_at_rest() -> HumanObservation {
        let frame = HumanFrame::new(0.0, standing_pose());
        HumanObservation { frame, joint_speed: [0.0; NUM_JOINTS] }
    }

    #[test]
    fn head_sphere_radius_at_zero_lead() {
        let p = HumanReachParams::default();
        let prims = complex_set(&obs_at_rest(), 0.0, &SkeletonMap::default(), &p).unwrap();
        assert_eq!(prims.len(), 14);
        let head = prims
            .iter()
            .find(|pr| matches!(pr, ReachPrimitive::Sphere { center, .. } if *center == standing_pose()[joint::HEAD]))
            .unwrap();
        assert_abs_diff_eq!(head.radius(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn saturated_growth_adds_lead_time() {
        let p = HumanReachParams::default();
        let mut obs = obs_at_rest();
        obs.joint_speed = [p.v_max; NUM_JOINTS];
        let sk = SkeletonMap::default();
        let r0 = complex_set(&obs, 0.0, &sk, &p).unwrap();
        let r1 = complex_set(&obs, 0.5, &sk, &p).unwrap();
        for (a, b) in r0.iter().zip(&r1) {
            assert_abs_diff_eq!(b.radius() - a.radius(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn unobserved_time_adds_to_lead_time() {
        let p = HumanReachParams::default();
        let sk = SkeletonMap::default();
        let mut obs = obs_at_rest();
        obs.joint_speed = [0.3; NUM_JOINTS];
        let fresh = complex_set(&obs, 0.3, &sk, &p).unwrap();
        obs.frame.t = 0.1;
        let stale = complex_set(&obs, 0.2, &sk, &p).unwrap();
        for (a, b) in fresh.iter().zip(&stale) {
            assert_abs_diff_eq!(a.radius(), b.radius(), epsilon = 1e-12);
        }
    }

    #[test]
    fn cylinder_geometry() {
        let p = HumanReachParams::default();
        let mut obs = obs_at_rest();
        match simplified_set(&obs, 0.0, &p) {
            ReachPrimitive::VerticalCylinder { radius, .. } => assert_abs_diff_eq!(radius, 1.4, epsilon = 1e-12),
            _ => unreachable!(),
        }
        // Joint extent [0, 1.8] maps to [-0.5, 2.3] at zero lead time.
        for (j, p) in obs.frame.joints.iter_mut().enumerate() {
            p.z = if j == joint::HEAD { 1.8 } else if j == joint::L_FOOT { 0.0 } else { p.z.clamp(0.0, 1.8) };
        }
        match simplified_set(&obs, 0.0, &p) {
            ReachPrimitive::VerticalCylinder { z_min, z_max, .. } => {
                assert_abs_diff_eq!(z_min, -0.5, epsilon = 1e-12);
                assert_abs_diff_eq!(z_max, 2.3, epsilon = 1e-12);
            }
            _ => unreachable!(),
        }
        obs.joint_speed = [1.0; NUM_JOINTS];
        let r = |t| simplified_set(&obs, t, &p).radius();
        assert_abs_diff_eq!(r(0.5) - r(0.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_switching() {
        let p = HumanReachParams::default();
        let sk = SkeletonMap::default();
        let obs = obs_at_rest();
        let set = hybrid_set(&obs, 40, 0.025, &sk, &p, SetRegime::Hybrid).unwrap();
        for k in 1..=40 {
            assert_eq!(set.step(k).len(), if k <= 7 { 14 } else { 1 }, "step {k}");
        }
        let all = hybrid_set(&obs, 40, 0.025, &sk, &HumanReachParams { t_switch: 1.01, ..p }, SetRegime::Hybrid).unwrap();
        assert!(all.steps[..39].iter().all(|s| s.len() == 14));
        assert_eq!(all.step(40).len(), 1);
        let short = hybrid_set(&obs, 5, 0.025, &sk, &p, SetRegime::Hybrid).unwrap();
        assert_eq!(short.step(4).len(), 14);
        assert_eq!(short.step(5).len(), 1);
        let none = hybrid_set(&obs, 40, 0.025, &sk, &HumanReachParams { t_switch: 1e-6, ..p }, SetRegime::Hybrid).unwrap();
        assert!(none.steps.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn first_step_is_a_point() {
        let m = build_model(&ModelParams::default()).unwrap();
        let s = stack(&m, 10).unwrap();
        let x0 = StateVector::from_fn(|i, _| 0.1 * i as f64);
        let u0 = ControlInput::new(0.1, 0.05, -0.05);
        let z = mav_reachable(&s, &x0, &u0, &ControlBounds::default(), 1).unwrap();
        assert_eq!(z.num_generators(), 0);
        let x1 = m.a * x0 + m.b * u0.to_vector();
        for i in 0..3 {
            assert_abs_diff_eq!(z.center[i], x1[i], epsilon = 1e-15);
        }
        assert!(matches!(mav_reachable(&s, &x0, &u0, &ControlBounds::default(), 0), Err(Error::InvalidStep(0))));
        let cached = MavReach::new(&s, &ControlBounds::default());
        for k in 1..=10 {
            let a = mav_reachable(&s, &x0, &u0, &ControlBounds::default(), k).unwrap();
            let b = cached.zonotope(&x0, &u0, k).unwrap();
            assert!((a.center - b.center).amax() < 1e-14);
            assert!((a.generators - b.generators).amax() < 1e-14);
        }
    }

    #[test]
    fn zero_width_bounds_have_no_spread() {
        let m = build_model(&ModelParams::default()).unwrap();
        let s = stack(&m, 5).unwrap();
        let u = ControlInput::new(0.1, 0.0, 0.0);
        let b = ControlBounds { min: u, max: u };
        let z = mav_reachable(&s, &StateVector::zeros(), &u, &b, 5).unwrap();
        assert_eq!(z.reduced().num_generators(), 0);
        let traj = crate::dynamics::propagate(&m, &Default::default(), &[u; 5]);
        assert_abs_diff_eq!(z.center[2], traj[4].p.z, epsilon = 1e-15);
    }

    #[test]
    fn default_skeleton_is_valid() {
        let sk = SkeletonMap::default();
        sk.validate().unwrap();
        let json = serde_json::to_string(&sk).unwrap();
        let back: SkeletonMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sk);
        let mut bad = sk.clone();
        bad.elements.pop();
        assert!(bad.validate().is_err());
    }
}
