//! Position from ceiling-anchor ranges.
//!
//! Each range gives `d_j^2 = |P - A_j|^2`. Expanding and stacking the
//! anchors yields the linear system `Z x = q` with rows
//! `[1, -2x_j, -2y_j, -2z_j]`, unknown `x = [|P|^2, x, y, z]` and
//! `q_j = d_j^2 - |A_j|^2`. When every anchor sits at the same height the
//! system has a null space, and the solution is the particular
//! (pseudo-inverse) solution plus a null-space combination:
//!
//! * three non-collinear anchors: one null direction `x_p + t x_h`; the
//!   constraint `x_0 = x_1^2 + x_2^2 + x_3^2` is a quadratic in `t` whose two
//!   roots are mirror images across the ceiling plane;
//! * collinear anchors: two null directions `x_p + t x_h1 + k x_h2`; the
//!   constraint leaves a circle around the anchor line;
//! * four or more anchors: the least-squares particular solution, closed the
//!   same way when the anchors are coplanar.
//!
//! Systems are assembled in a local frame centred on the anchors so that the
//! quadratic closure is well conditioned; results are mapped back to world
//! coordinates.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{distance, Point3, RoomConfig};

/// Relative singular-value threshold for rank and collinearity decisions.
pub const RANK_TOLERANCE: f64 = 1e-9;
/// Absolute slack (cm) when testing candidates against the room's height.
const HEIGHT_SLACK_CM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("need at least {need} anchors, have {have}")]
    InsufficientAnchors { need: usize, have: usize },
    #[error("anchors are not at a common ceiling height")]
    InconsistentCeiling,
    #[error("range to anchor {index} must be positive and finite, got {value}")]
    BadDistance { index: usize, value: f64 },
    #[error("anchors are collinear")]
    CollinearAnchors,
    #[error("anchors are not collinear")]
    NotCollinear,
    #[error("anchors coincide; no line or plane is defined")]
    DegenerateAnchors,
    #[error("ranges are inconsistent: no real intersection (discriminant {discriminant})")]
    NoRealRoot { discriminant: f64 },
    #[error("the coordinate constraint does not meet the solution circle")]
    ConstraintMissesFamily,
    #[error("system matrix rank {rank} is too low for a unique solution")]
    RankDeficient { rank: usize },
    #[error("no candidate lies between floor and ceiling")]
    NoFeasibleCandidate,
}

/// One LED anchor and its measured range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorMeasurement {
    pub anchor: Point3,
    pub distance_cm: f64,
}

impl AnchorMeasurement {
    pub fn new(anchor: Point3, distance_cm: f64) -> Self {
        Self { anchor, distance_cm }
    }
}

/// `Z x = q` in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub z_matrix: DMatrix<f64>,
    pub q_vector: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trilateration,
    CollinearFamily,
    LeastSquares,
}

/// Circle of positions consistent with ranges to collinear anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleFamily {
    pub center: Point3,
    /// Unit vector along the anchor line.
    pub axis: [f64; 3],
    pub radius: f64,
    /// Orthonormal basis of the circle's plane.
    pub basis: [[f64; 3]; 2],
}

impl CircleFamily {
    pub fn point_at(&self, angle: f64) -> Point3 {
        let (s, c) = angle.sin_cos();
        let [e1, e2] = self.basis;
        let r = self.radius;
        self.center.translate(
            r * (c * e1[0] + s * e2[0]),
            r * (c * e1[1] + s * e2[1]),
            r * (c * e1[2] + s * e2[2]),
        )
    }

    fn angle_towards(&self, dir: Vector3<f64>) -> Option<f64> {
        let e1 = Vector3::from(self.basis[0]);
        let e2 = Vector3::from(self.basis[1]);
        let (a, b) = (dir.dot(&e1), dir.dot(&e2));
        (a.hypot(b) > 1e-12).then(|| b.atan2(a))
    }

    /// Point of the family nearest `p`; the lowest point if `p` projects onto
    /// the centre.
    pub fn nearest_point(&self, p: &Point3) -> Point3 {
        match self.angle_towards(p.to_vector() - self.center.to_vector()) {
            Some(a) => self.point_at(a),
            None => self.lowest_point(),
        }
    }

    pub fn lowest_point(&self) -> Point3 {
        match self.angle_towards(Vector3::new(0.0, 0.0, -1.0)) {
            Some(a) => self.point_at(a),
            None => self.point_at(0.0),
        }
    }

    /// Points of the family where one world coordinate takes a known value.
    pub fn intersect(&self, known: KnownCoordinate) -> Result<Vec<Point3>, SolverError> {
        let (k, value) = known.axis_value();
        let c = [self.center.x, self.center.y, self.center.z][k];
        let a = self.radius * self.basis[0][k];
        let b = self.radius * self.basis[1][k];
        let amp = a.hypot(b);
        let rhs = value - c;
        let tol = 1e-9 * (1.0 + self.radius + c.abs());
        if amp <= tol {
            return Err(SolverError::ConstraintMissesFamily);
        }
        if rhs.abs() > amp + tol {
            return Err(SolverError::ConstraintMissesFamily);
        }
        let phase = b.atan2(a);
        let delta = (rhs / amp).clamp(-1.0, 1.0).acos();
        if delta * amp <= tol {
            return Ok(vec![self.point_at(phase)]);
        }
        Ok(vec![self.point_at(phase + delta), self.point_at(phase - delta)])
    }
}

/// An externally known world coordinate used to pick points of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnownCoordinate {
    X(f64),
    Y(f64),
    Z(f64),
}

impl KnownCoordinate {
    fn axis_value(self) -> (usize, f64) {
        match self {
            KnownCoordinate::X(v) => (0, v),
            KnownCoordinate::Y(v) => (1, v),
            KnownCoordinate::Z(v) => (2, v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: Point3,
    /// Alternative solutions, including `position` itself.
    pub candidates: Vec<Point3>,
    pub family: Option<CircleFamily>,
    /// RMS range mismatch at `position`.
    pub residual_cm: f64,
    pub method: Method,
}

/// RMS of `|P - A_j| - d_j` over all measurements.
pub fn range_residual(position: &Point3, measurements: &[AnchorMeasurement]) -> f64 {
    if measurements.is_empty() {
        return 0.0;
    }
    let ss: f64 = measurements
        .iter()
        .map(|m| (distance(position, &m.anchor) - m.distance_cm).powi(2))
        .sum();
    (ss / measurements.len() as f64).sqrt()
}

fn check_distances(ms: &[AnchorMeasurement]) -> Result<(), SolverError> {
    for (index, m) in ms.iter().enumerate() {
        if !(m.distance_cm.is_finite() && m.distance_cm > 0.0) {
            return Err(SolverError::BadDistance {
                index,
                value: m.distance_cm,
            });
        }
    }
    Ok(())
}

/// Common anchor height, or `InconsistentCeiling`.
fn common_height(ms: &[AnchorMeasurement]) -> Result<f64, SolverError> {
    let h = ms[0].anchor.z;
    let tol = 1e-9 * (1.0 + h.abs());
    if ms.iter().any(|m| (m.anchor.z - h).abs() > tol) {
        return Err(SolverError::InconsistentCeiling);
    }
    Ok(h)
}

/// Assembles `Z x = q` for anchors sharing one ceiling height.
pub fn build_system(measurements: &[AnchorMeasurement]) -> Result<LinearSystem, SolverError> {
    if measurements.len() < 3 {
        return Err(SolverError::InsufficientAnchors {
            need: 3,
            have: measurements.len(),
        });
    }
    check_distances(measurements)?;
    common_height(measurements)?;
    Ok(system_in_frame(measurements, &Point3::default()))
}

fn system_in_frame(ms: &[AnchorMeasurement], origin: &Point3) -> LinearSystem {
    let n = ms.len();
    let mut z = DMatrix::zeros(n, 4);
    let mut q = DVector::zeros(n);
    for (j, m) in ms.iter().enumerate() {
        let (x, y, h) = (
            m.anchor.x - origin.x,
            m.anchor.y - origin.y,
            m.anchor.z - origin.z,
        );
        z[(j, 0)] = 1.0;
        z[(j, 1)] = -2.0 * x;
        z[(j, 2)] = -2.0 * y;
        z[(j, 3)] = -2.0 * h;
        q[j] = m.distance_cm * m.distance_cm - x * x - y * y - h * h;
    }
    LinearSystem {
        z_matrix: z,
        q_vector: q,
    }
}

/// Pseudo-inverse particular solution plus an orthonormal null-space basis.
struct AffineSolution {
    particular: DVector<f64>,
    null_basis: Vec<DVector<f64>>,
}

/// Singular values, left and right singular vectors of `m` (full `V`).
///
/// faer rather than nalgebra: nalgebra's bidiagonal SVD returns a wrong
/// factorisation for some small well-conditioned matrices of this shape.
fn full_svd(m: &DMatrix<f64>) -> (Vec<f64>, faer::Mat<f64>, faer::Mat<f64>) {
    let (rows, cols) = m.shape();
    let a = faer::Mat::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = a.svd().expect("SVD of a finite matrix converges");
    let s = svd.S().column_vector();
    let values = (0..rows.min(cols)).map(|i| s[i]).collect();
    (values, svd.U().to_owned(), svd.V().to_owned())
}

fn solve_affine(system: &LinearSystem) -> AffineSolution {
    let (rows, cols) = system.z_matrix.shape();
    let (values, u, v) = full_svd(&system.z_matrix);
    let s_max = values.iter().copied().fold(0.0, f64::max);
    let mut particular = DVector::zeros(cols);
    let mut null_basis = Vec::new();
    for i in 0..cols {
        let vi = DVector::from_fn(cols, |r, _| v[(r, i)]);
        match values.get(i) {
            Some(&s) if s > RANK_TOLERANCE * s_max => {
                let uq: f64 = (0..rows).map(|r| u[(r, i)] * system.q_vector[r]).sum();
                particular += vi * (uq / s);
            }
            _ => null_basis.push(vi),
        }
    }
    AffineSolution {
        particular,
        null_basis,
    }
}

/// Ratio of the smaller to the larger singular value of the centred
/// horizontal anchor layout; `None` when all anchors coincide.
fn planar_spread(ms: &[AnchorMeasurement]) -> Option<f64> {
    let n = ms.len() as f64;
    let cx = ms.iter().map(|m| m.anchor.x).sum::<f64>() / n;
    let cy = ms.iter().map(|m| m.anchor.y).sum::<f64>() / n;
    let centred = DMatrix::from_fn(ms.len().max(2), 2, |r, c| match ms.get(r) {
        Some(m) if c == 0 => m.anchor.x - cx,
        Some(m) => m.anchor.y - cy,
        None => 0.0,
    });
    let (sv, _, _) = full_svd(&centred);
    let (hi, lo) = (sv[0].max(sv[1]), sv[0].min(sv[1]));
    (hi > 0.0).then(|| lo / hi)
}

/// True when the anchors' horizontal positions lie on one line.
pub fn anchors_collinear(measurements: &[AnchorMeasurement]) -> bool {
    planar_spread(measurements).is_none_or(|r| r < RANK_TOLERANCE)
}

fn local_origin(ms: &[AnchorMeasurement]) -> Point3 {
    let n = ms.len() as f64;
    Point3::new(
        ms.iter().map(|m| m.anchor.x).sum::<f64>() / n,
        ms.iter().map(|m| m.anchor.y).sum::<f64>() / n,
        ms.iter().map(|m| m.anchor.z).sum::<f64>() / n,
    )
}

fn to_world(x: &DVector<f64>, origin: &Point3) -> Point3 {
    Point3::new(x[1] + origin.x, x[2] + origin.y, x[3] + origin.z)
}

enum Closure {
    Pair(DVector<f64>, DVector<f64>),
    Single(DVector<f64>),
}

/// Applies `x_0 = |x_{1..3}|^2` along one null direction.
fn close_one_direction(p: &DVector<f64>, h: &DVector<f64>) -> Result<Closure, (f64, DVector<f64>)> {
    let ps = p.rows(1, 3);
    let hs = h.rows(1, 3);
    let a = hs.norm_squared();
    let b = 2.0 * ps.dot(&hs) - h[0];
    let c = ps.norm_squared() - p[0];
    let disc = b * b - 4.0 * a * c;
    // Rounding in c scales with its terms, not with c itself.
    let tol = 1e-11 * (b * b + 4.0 * a * (ps.norm_squared() + p[0].abs()));
    if disc < -tol {
        let vertex = p + h * (-b / (2.0 * a));
        return Err((disc, vertex));
    }
    if disc <= tol {
        return Ok(Closure::Single(p + h * (-b / (2.0 * a))));
    }
    let root = disc.sqrt();
    // Stable pair: avoid cancellation in -b +/- root.
    let sign = if b >= 0.0 { 1.0 } else { -1.0 };
    let qv = -0.5 * (b + sign * root);
    let (t1, t2) = if qv != 0.0 { (qv / a, c / qv) } else { (root / (2.0 * a), -root / (2.0 * a)) };
    Ok(Closure::Pair(p + h * t1, p + h * t2))
}

fn lowest<'a, I: IntoIterator<Item = &'a Point3>>(pts: I) -> Option<Point3> {
    pts.into_iter().copied().min_by(|a, b| a.z.total_cmp(&b.z))
}

fn estimate_from_closure(
    closure: Closure,
    origin: &Point3,
    ms: &[AnchorMeasurement],
    method: Method,
) -> PositionEstimate {
    let candidates: Vec<Point3> = match closure {
        Closure::Pair(a, b) => vec![to_world(&a, origin), to_world(&b, origin)],
        Closure::Single(a) => vec![to_world(&a, origin)],
    };
    let position = lowest(&candidates).expect("at least one candidate");
    PositionEstimate {
        position,
        residual_cm: range_residual(&position, ms),
        candidates,
        family: None,
        method,
    }
}

/// Exact intersection of three spheres centred on non-collinear ceiling
/// anchors. Returns both mirror candidates; `position` is the lower one.
pub fn trilaterate(measurements: &[AnchorMeasurement]) -> Result<PositionEstimate, SolverError> {
    if measurements.len() != 3 {
        return Err(SolverError::InsufficientAnchors {
            need: 3,
            have: measurements.len(),
        });
    }
    check_distances(measurements)?;
    common_height(measurements)?;
    if anchors_collinear(measurements) {
        return Err(SolverError::CollinearAnchors);
    }
    let origin = local_origin(measurements);
    let sol = solve_affine(&system_in_frame(measurements, &origin));
    let [h] = sol.null_basis.as_slice() else {
        return Err(SolverError::RankDeficient {
            rank: 4 - sol.null_basis.len(),
        });
    };
    match close_one_direction(&sol.particular, h) {
        Ok(closure) => Ok(estimate_from_closure(
            closure,
            &origin,
            measurements,
            Method::Trilateration,
        )),
        Err((discriminant, _)) => Err(SolverError::NoRealRoot { discriminant }),
    }
}

/// Least-squares closure used when three ranges have no exact intersection:
/// the point minimising the violation of the norm constraint.
fn trilaterate_approximate(measurements: &[AnchorMeasurement]) -> Result<PositionEstimate, SolverError> {
    let origin = local_origin(measurements);
    let sol = solve_affine(&system_in_frame(measurements, &origin));
    let [h] = sol.null_basis.as_slice() else {
        return Err(SolverError::RankDeficient {
            rank: 4 - sol.null_basis.len(),
        });
    };
    let closure = match close_one_direction(&sol.particular, h) {
        Ok(c) => c,
        Err((_, vertex)) => Closure::Single(vertex),
    };
    Ok(estimate_from_closure(
        closure,
        &origin,
        measurements,
        Method::LeastSquares,
    ))
}

/// Anchors on a line: the ranges fix a circle about the line. With a known
/// coordinate the circle is cut down to at most two points, of which the
/// lowest at or below the ceiling becomes `position`.
pub fn trilaterate_collinear(
    measurements: &[AnchorMeasurement],
    known: Option<KnownCoordinate>,
) -> Result<PositionEstimate, SolverError> {
    if measurements.len() < 2 {
        return Err(SolverError::InsufficientAnchors {
            need: 2,
            have: measurements.len(),
        });
    }
    check_distances(measurements)?;
    let ceiling = common_height(measurements)?;
    match planar_spread(measurements) {
        None => return Err(SolverError::DegenerateAnchors),
        Some(r) if r >= RANK_TOLERANCE && measurements.len() > 2 => {
            return Err(SolverError::NotCollinear)
        }
        _ => {}
    }
    let origin = local_origin(measurements);
    let sol = solve_affine(&system_in_frame(measurements, &origin));
    let [n1, n2] = sol.null_basis.as_slice() else {
        return Err(SolverError::RankDeficient {
            rank: 4 - sol.null_basis.len(),
        });
    };
    let family = circle_from_null_space(&sol.particular, n1, n2, &origin)?;

    let candidates = match known {
        Some(k) => family.intersect(k)?,
        None => vec![family.lowest_point()],
    };
    let below: Vec<&Point3> = candidates
        .iter()
        .filter(|p| p.z <= ceiling + HEIGHT_SLACK_CM)
        .collect();
    let position = lowest(below)
        .or_else(|| lowest(&candidates))
        .expect("intersection yields at least one point");
    Ok(PositionEstimate {
        position,
        residual_cm: range_residual(&position, measurements),
        candidates,
        family: Some(family),
        method: Method::CollinearFamily,
    })
}

/// Turns `x_p + t n1 + k n2` with `x_0 = |x_s|^2` into a geometric circle.
fn circle_from_null_space(
    p: &DVector<f64>,
    n1: &DVector<f64>,
    n2: &DVector<f64>,
    origin: &Point3,
) -> Result<CircleFamily, SolverError> {
    let q = Vector3::new(p[1], p[2], p[3]);
    let s1 = Vector3::new(n1[1], n1[2], n1[3]);
    let s2 = Vector3::new(n2[1], n2[2], n2[3]);
    // Gram-Schmidt on the spatial parts, carrying the x_0 coefficients along.
    let l1 = s1.norm();
    if l1 < 1e-12 {
        return Err(SolverError::DegenerateAnchors);
    }
    let (e1, c1) = (s1 / l1, n1[0] / l1);
    let proj = e1.dot(&s2);
    let w = s2 - e1 * proj;
    let w0 = n2[0] - c1 * proj;
    let l2 = w.norm();
    if l2 < 1e-12 {
        return Err(SolverError::DegenerateAnchors);
    }
    let (e2, c2) = (w / l2, w0 / l2);

    let alpha = 0.5 * c1 - q.dot(&e1);
    let beta = 0.5 * c2 - q.dot(&e2);
    let r2 = alpha * alpha + beta * beta - q.norm_squared() + p[0];
    let scale = q.norm_squared() + p[0].abs() + 1.0;
    if r2 < -1e-12 * scale {
        return Err(SolverError::NoRealRoot { discriminant: r2 });
    }
    let center = q + e1 * alpha + e2 * beta;
    let axis = e1.cross(&e2);
    Ok(CircleFamily {
        center: Point3::new(center.x + origin.x, center.y + origin.y, center.z + origin.z),
        axis: [axis.x, axis.y, axis.z],
        radius: r2.max(0.0).sqrt(),
        basis: [[e1.x, e1.y, e1.z], [e2.x, e2.y, e2.z]],
    })
}

/// Least squares over four or more anchors via SVD. Coplanar anchors leave
/// one null direction, closed with the norm constraint as for three anchors;
/// without a real root the constraint is met as closely as possible.
pub fn multilaterate(measurements: &[AnchorMeasurement]) -> Result<PositionEstimate, SolverError> {
    if measurements.len() < 4 {
        return Err(SolverError::InsufficientAnchors {
            need: 4,
            have: measurements.len(),
        });
    }
    check_distances(measurements)?;
    let origin = local_origin(measurements);
    let sol = solve_affine(&system_in_frame(measurements, &origin));
    let closure = match sol.null_basis.as_slice() {
        [] => Closure::Single(sol.particular.clone()),
        [h] => match close_one_direction(&sol.particular, h) {
            Ok(c) => c,
            Err((_, vertex)) => Closure::Single(vertex),
        },
        more => {
            return Err(SolverError::RankDeficient {
                rank: 4 - more.len(),
            })
        }
    };
    Ok(estimate_from_closure(
        closure,
        &origin,
        measurements,
        Method::LeastSquares,
    ))
}

/// Keeps candidates between floor and ceiling, then prefers the one nearest
/// `prior`, or the lowest when there is no prior.
pub fn resolve_ambiguity(
    candidates: &[Point3],
    room: &RoomConfig,
    prior: Option<&Point3>,
) -> Result<Point3, SolverError> {
    let feasible = candidates.iter().filter(|p| {
        p.z >= -HEIGHT_SLACK_CM && p.z <= room.ceiling_height_cm + HEIGHT_SLACK_CM
    });
    let chosen = match prior {
        Some(prior) => feasible.min_by(|a, b| distance(a, prior).total_cmp(&distance(b, prior))),
        None => feasible.min_by(|a, b| a.z.total_cmp(&b.z)),
    };
    chosen.copied().ok_or(SolverError::NoFeasibleCandidate)
}

/// Full pipeline: pick the solver by anchor count and layout, then resolve
/// mirror ambiguity against the room and an optional prior (typically the
/// tracker's prediction).
pub fn estimate_position(
    measurements: &[AnchorMeasurement],
    room: &RoomConfig,
    prior: Option<&Point3>,
) -> Result<PositionEstimate, SolverError> {
    if measurements.len() < 3 {
        return Err(SolverError::InsufficientAnchors {
            need: 3,
            have: measurements.len(),
        });
    }
    check_distances(measurements)?;
    let h = common_height(measurements)?;
    if (h - room.ceiling_height_cm).abs() > 1e-9 * (1.0 + h.abs()) {
        return Err(SolverError::InconsistentCeiling);
    }

    let mut estimate = if anchors_collinear(measurements) {
        let mut est = trilaterate_collinear(measurements, None)?;
        let family = est.family.expect("collinear solve returns a family");
        let pick = match prior {
            Some(p) => family.nearest_point(p),
            None => family.lowest_point(),
        };
        let mut candidates = vec![pick];
        if pick.z < 0.0 {
            // Circle dips below the floor: fall back to where it meets it.
            candidates.extend(family.intersect(KnownCoordinate::Z(0.0)).unwrap_or_default());
        }
        est.candidates = candidates;
        est
    } else if measurements.len() == 3 {
        match trilaterate(measurements) {
            Ok(est) => est,
            Err(SolverError::NoRealRoot { .. }) => trilaterate_approximate(measurements)?,
            Err(e) => return Err(e),
        }
    } else {
        multilaterate(measurements)?
    };

    estimate.position = resolve_ambiguity(&estimate.candidates, room, prior)?;
    estimate.residual_cm = range_residual(&estimate.position, measurements);
    Ok(estimate)
}
