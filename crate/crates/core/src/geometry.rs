//! Taxel layout, half-ellipsoid sensor core and surface distances.
//!
//! The sensor core is modelled as an axis-aligned half-ellipsoid. Surface
//! points are addressed by `(theta, phi)` with `theta` in `[0, pi]` and
//! `phi` in `[pi, 2pi]`, which covers the half with `y <= centroid.y`:
//!
//! ```text
//! x = cx + a sin(theta) cos(phi)
//! y = cy + b sin(theta) sin(phi)
//! z = cz + c cos(theta)
//! ```
//!
//! All lengths are millimeters.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use nalgebra::{Matrix6, Vector3, Vector6};
use thiserror::Error;

/// 3D point or vector in the sensor frame (millimeters).
pub type Point3 = Vector3<f64>;

/// Number of impedance electrodes on the sensor core.
pub const TAXEL_COUNT: usize = 24;

/// Default slack for the half-space check on taxel layouts (millimeters).
pub const DEFAULT_LAYOUT_SLACK: f64 = 0.5;

/// Default polyline resolution for geodesic distances.
pub const DEFAULT_GEODESIC_SEGMENTS: usize = 50;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("layout must contain exactly {TAXEL_COUNT} taxels, got {0}")]
    TaxelCount(usize),
    #[error("layout line {line}: {reason}")]
    LayoutSyntax { line: usize, reason: String },
    #[error("taxel {index} lies outside the half-space y <= {slack} (y = {y})")]
    OutsideHalfSpace { index: usize, y: f64, slack: f64 },
    #[error("taxel {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("invalid ellipsoid: {0}")]
    InvalidModel(String),
    #[error("surface parameter out of range: theta = {theta}, phi = {phi}")]
    ParamOutOfRange { theta: f64, phi: f64 },
    #[error("point coincides with the ellipsoid centroid; radial direction undefined")]
    AtCentroid,
    #[error("point lies on the far half of the ellipsoid (normalized y = {0})")]
    OutsideDomain(f64),
    #[error("point is {distance} mm from the surface, more than the allowed {max}")]
    OffSurface { distance: f64, max: f64 },
    #[error("ellipsoid fit failed: degenerate layout along {direction}")]
    DegenerateFit { direction: String },
    #[error("ellipsoid fit failed: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Positions of the 24 taxels, index `i` holding taxel `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxelLayout {
    positions: Vec<Point3>,
}

impl TaxelLayout {
    /// Validates a layout. Every taxel must satisfy `y <= slack`, the half
    /// covered by the surface parametrization.
    pub fn new(positions: Vec<Point3>, slack: f64) -> Result<Self, GeometryError> {
        if positions.len() != TAXEL_COUNT {
            return Err(GeometryError::TaxelCount(positions.len()));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(GeometryError::NonFinite { index: i + 1 });
            }
            if p.y > slack {
                return Err(GeometryError::OutsideHalfSpace { index: i + 1, y: p.y, slack });
            }
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    /// Parses the `index x y z` table format. Blank lines and `#` comments
    /// are ignored; indices must run 1..=24 in order.
    pub fn parse(text: &str, slack: f64) -> Result<Self, GeometryError> {
        Self::read(text.as_bytes(), slack)
    }

    pub fn read<R: BufRead>(reader: R, slack: f64) -> Result<Self, GeometryError> {
        let mut positions = Vec::with_capacity(TAXEL_COUNT);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |reason: String| GeometryError::LayoutSyntax { line: lineno + 1, reason };
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(syntax(format!("expected 4 fields, found {}", fields.len())));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|_| syntax(format!("bad index {:?}", fields[0])))?;
            if index != positions.len() + 1 {
                return Err(syntax(format!(
                    "expected index {}, found {index}",
                    positions.len() + 1
                )));
            }
            let mut xyz = [0.0; 3];
            for (slot, field) in xyz.iter_mut().zip(&fields[1..]) {
                *slot = field
                    .parse()
                    .map_err(|_| syntax(format!("bad coordinate {field:?}")))?;
            }
            positions.push(Point3::new(xyz[0], xyz[1], xyz[2]));
        }
        Self::new(positions, slack)
    }

    pub fn load(path: &Path, slack: f64) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), slack)
    }

    /// The layout shipped with the crate: 24 taxels on the reference core
    /// returned by [`EllipsoidModel::reference`].
    pub fn reference() -> Self {
        Self::parse(REFERENCE_LAYOUT, DEFAULT_LAYOUT_SLACK).expect("bundled layout is valid")
    }
}

impl fmt::Display for TaxelLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.positions.iter().enumerate() {
            writeln!(f, "{} {:.6} {:.6} {:.6}", i + 1, p.x, p.y, p.z)?;
        }
        Ok(())
    }
}

const REFERENCE_LAYOUT: &str = include_str!("../data/reference_layout.txt");

/// Surface coordinates on the half-ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceParam {
    pub theta: f64,
    pub phi: f64,
}

impl SurfaceParam {
    pub fn new(theta: f64, phi: f64) -> Result<Self, GeometryError> {
        if !(0.0..=PI).contains(&theta) || !(PI..=TAU).contains(&phi) {
            return Err(GeometryError::ParamOutOfRange { theta, phi });
        }
        Ok(Self { theta, phi })
    }
}

/// Axis-aligned ellipsoid with semi-axes `a`, `b`, `c` around `centroid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub centroid: Point3,
}

/// Polyline used to approximate surface distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeodesicPath {
    /// Points along the central plane section through both endpoints,
    /// sampled at equal angles in normalized (unit-sphere) coordinates.
    /// Exact great circles on a sphere; cheap.
    CentralSection,
    /// Central section relaxed towards a discrete shortest path: every
    /// interior vertex is moved towards the surface point closest to the
    /// midpoint of its neighbours until the polyline stops changing.
    #[default]
    Relaxed,
    /// Points at equal steps of linear interpolation in `(theta, phi)`.
    ParameterLinear,
}

impl EllipsoidModel {
    pub fn new(a: f64, b: f64, c: f64, centroid: Point3) -> Result<Self, GeometryError> {
        for (name, v) in [("a", a), ("b", b), ("c", c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidModel(format!(
                    "semi-axis {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !centroid.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidModel("non-finite centroid".into()));
        }
        Ok(Self { a, b, c, centroid })
    }

    /// Core geometry the bundled layout was generated on.
    pub fn reference() -> Self {
        Self { a: 12.0, b: 7.0, c: 7.0, centroid: Point3::zeros() }
    }

    pub fn axes(&self) -> Point3 {
        Point3::new(self.a, self.b, self.c)
    }

    pub fn param_to_point(&self, p: SurfaceParam) -> Point3 {
        let (st, ct) = p.theta.sin_cos();
        let (sp, cp) = p.phi.sin_cos();
        self.centroid + Point3::new(self.a * st * cp, self.b * st * sp, self.c * ct)
    }

    /// Parameters of the radial projection of `x` onto the surface.
    ///
    /// At the poles `phi` is undefined and `pi` is returned. Points with a
    /// small positive normalized `y` (up to 1e-9) are folded onto the rim.
    pub fn point_to_param(&self, x: &Point3) -> Result<SurfaceParam, GeometryError> {
        let u = self.normalized(x);
        let r = u.norm();
        if r == 0.0 || !r.is_finite() {
            return Err(GeometryError::AtCentroid);
        }
        let u = u / r;
        if u.y > 1e-9 {
            return Err(GeometryError::OutsideDomain(u.y));
        }
        let theta = u.z.clamp(-1.0, 1.0).acos();
        let rho = u.x.hypot(u.y);
        let phi = if rho <= 1e-15 {
            PI
        } else {
            let raw = u.y.atan2(u.x);
            if raw <= 0.0 {
                (raw + TAU).clamp(PI, TAU)
            } else if u.x < 0.0 {
                PI
            } else {
                TAU
            }
        };
        Ok(SurfaceParam { theta, phi })
    }

    /// Like [`point_to_param`](Self::point_to_param), but rejects points
    /// farther than `max_distance` from their surface projection.
    pub fn point_to_param_within(
        &self,
        x: &Point3,
        max_distance: f64,
    ) -> Result<SurfaceParam, GeometryError> {
        let p = self.point_to_param(x)?;
        let distance = (self.param_to_point(p) - x).norm();
        if distance > max_distance {
            return Err(GeometryError::OffSurface { distance, max: max_distance });
        }
        Ok(p)
    }

    /// Radial projection of `x` onto the surface.
    pub fn project(&self, x: &Point3) -> Option<Point3> {
        let u = self.normalized(x);
        let r = u.norm();
        (r > 0.0 && r.is_finite()).then(|| self.centroid + (x - self.centroid) / r)
    }

    /// Outward unit normal at `p`.
    pub fn surface_normal(&self, p: SurfaceParam) -> Point3 {
        let (st, ct) = p.theta.sin_cos();
        let (sp, cp) = p.phi.sin_cos();
        // gradient of the implicit function, with the common 1/abc factor dropped
        Point3::new(st * cp / self.a, st * sp / self.b, ct / self.c).normalize()
    }

    /// Value of `(x-cx)^2/a^2 + (y-cy)^2/b^2 + (z-cz)^2/c^2 - 1`.
    pub fn algebraic_residual(&self, x: &Point3) -> f64 {
        self.normalized(x).norm_squared() - 1.0
    }

    /// Approximate geodesic distance: length of the relaxed surface polyline
    /// with `n_segments` segments. Symmetric, and consistent with the
    /// triangle inequality.
    pub fn geodesic_distance(&self, p: SurfaceParam, q: SurfaceParam, n_segments: usize) -> f64 {
        self.polyline_distance(p, q, n_segments, GeodesicPath::Relaxed)
    }

    /// Length of the polyline through `n_segments + 1` surface points from
    /// `p` to `q` along the chosen `path`.
    pub fn polyline_distance(
        &self,
        p: SurfaceParam,
        q: SurfaceParam,
        n_segments: usize,
        path: GeodesicPath,
    ) -> f64 {
        let n = n_segments.max(1);
        if p == q {
            return 0.0;
        }
        // canonical endpoint order makes the result exactly symmetric
        let (p, q) = if (p.theta, p.phi) <= (q.theta, q.phi) { (p, q) } else { (q, p) };
        let mut length = 0.0;
        let mut prev = self.param_to_point(p);
        match path {
            GeodesicPath::ParameterLinear => {
                for k in 1..=n {
                    let t = k as f64 / n as f64;
                    let s = SurfaceParam {
                        theta: p.theta + t * (q.theta - p.theta),
                        phi: p.phi + t * (q.phi - p.phi),
                    };
                    let next = self.param_to_point(s);
                    length += (next - prev).norm();
                    prev = next;
                }
            }
            GeodesicPath::CentralSection => {
                for next in self.central_section(p, q, n).into_iter().skip(1) {
                    length += (next - prev).norm();
                    prev = next;
                }
            }
            GeodesicPath::Relaxed => {
                length = polyline_length(&self.relaxed_path(p, q, n));
            }
        }
        length
    }

    /// `n + 1` points on the central section from `p` to `q`, equally
    /// spaced in angle on the normalized sphere.
    fn central_section(&self, p: SurfaceParam, q: SurfaceParam, n: usize) -> Vec<Point3> {
        let up = unit_direction(p);
        let uq = unit_direction(q);
        let axes = self.axes();
        let (perp, omega) = arc_frame(&up, &uq);
        let mut points: Vec<Point3> = (0..=n)
            .map(|k| {
                let angle = omega * k as f64 / n as f64;
                self.centroid + (up * angle.cos() + perp * angle.sin()).component_mul(&axes)
            })
            .collect();
        points[0] = self.param_to_point(p);
        points[n] = self.param_to_point(q);
        points
    }

    /// Discrete shortest path with `n` segments, built coarse to fine.
    fn relaxed_path(&self, p: SurfaceParam, q: SurfaceParam, n: usize) -> Vec<Point3> {
        let mut levels = vec![n];
        while *levels.last().unwrap() > 4 {
            let next = levels.last().unwrap().div_ceil(2);
            levels.push(next);
        }
        levels.reverse();
        let mut path = self.central_section(p, q, levels[0]);
        for (i, &m) in levels.iter().enumerate() {
            if i > 0 {
                path = self.resample(&path, m);
            }
            self.relax(&mut path);
        }
        path
    }

    /// Over-relaxed Gauss-Seidel sweeps of the midpoint rule.
    fn relax(&self, path: &mut [Point3]) {
        let n = path.len() - 1;
        if n < 2 {
            return;
        }
        let scale = self.a.max(self.b).max(self.c);
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / n as f64).sin());
        let max_sweeps = 40 * n + 200;
        for _ in 0..max_sweeps {
            let mut max_move: f64 = 0.0;
            for k in 1..n {
                let mid = (path[k - 1] + path[k + 1]) * 0.5;
                let moved = self.closest_surface_point(&(path[k] + (mid - path[k]) * omega));
                max_move = max_move.max((moved - path[k]).norm());
                path[k] = moved;
            }
            if max_move <= 1e-5 * scale {
                break;
            }
        }
    }

    /// `m + 1` points at equal arc length along `path`, snapped to the surface.
    fn resample(&self, path: &[Point3], m: usize) -> Vec<Point3> {
        let mut cumulative = Vec::with_capacity(path.len());
        cumulative.push(0.0);
        for w in path.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        let total = *cumulative.last().unwrap();
        let mut out = Vec::with_capacity(m + 1);
        out.push(path[0]);
        let mut seg = 0;
        for k in 1..m {
            let s = total * k as f64 / m as f64;
            while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
                seg += 1;
            }
            let span = cumulative[seg + 1] - cumulative[seg];
            let t = if span > 0.0 { (s - cumulative[seg]) / span } else { 0.0 };
            out.push(self.closest_surface_point(&(path[seg] + (path[seg + 1] - path[seg]) * t)));
        }
        out.push(*path.last().unwrap());
        out
    }

    /// Approximate closest point on the modelled half of the surface, by
    /// Newton steps on the implicit function. Points that cross to the far
    /// half are mirrored back through the `y = cy` symmetry plane.
    pub fn closest_surface_point(&self, x: &Point3) -> Point3 {
        let inv_sq = Point3::new(
            1.0 / (self.a * self.a),
            1.0 / (self.b * self.b),
            1.0 / (self.c * self.c),
        );
        let mut y = x - self.centroid;
        if y.norm_squared() == 0.0 {
            return self.centroid + Point3::new(0.0, -self.b, 0.0);
        }
        for _ in 0..4 {
            let f = y.component_mul(&y).dot(&inv_sq) - 1.0;
            let grad = y.component_mul(&inv_sq) * 2.0;
            let g2 = grad.norm_squared();
            if g2 == 0.0 {
                break;
            }
            y -= grad * (f / g2);
        }
        // exact radial correction so the result lies on the surface
        let r = y.component_div(&self.axes()).norm();
        if r > 0.0 {
            y /= r;
        }
        y.y = -y.y.abs();
        self.centroid + y
    }

    fn normalized(&self, x: &Point3) -> Point3 {
        (x - self.centroid).component_div(&self.axes())
    }
}

fn polyline_length(points: &[Point3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Direction of `p` on the unit sphere of normalized coordinates.
fn unit_direction(p: SurfaceParam) -> Point3 {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    Point3::new(st * cp, st * sp, ct)
}

/// Unit vector orthogonal to `from` in the plane of the arc towards `to`,
/// and the arc angle. Antipodal endpoints are joined through the `-y` side
/// so the arc stays on the modelled half.
fn arc_frame(from: &Point3, to: &Point3) -> (Point3, f64) {
    let cos = from.dot(to).clamp(-1.0, 1.0);
    let rejection = to - from * cos;
    let norm = rejection.norm();
    if norm > 1e-12 {
        let sin = norm;
        return (rejection / norm, sin.atan2(cos));
    }
    if cos > 0.0 {
        return (Point3::zeros(), 0.0);
    }
    let mut hint = Point3::new(0.0, -1.0, 0.0);
    hint -= from * from.dot(&hint);
    if hint.norm() < 1e-9 {
        hint = Point3::new(1.0, 0.0, 0.0) - from * from.x;
    }
    (hint.normalize(), PI)
}

/// Tuning for [`fit_ellipsoid`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Upper bound on the mean absolute algebraic residual of the result.
    pub max_mean_residual: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_mean_residual: 0.1, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EllipsoidFit {
    pub model: EllipsoidModel,
    pub mean_abs_residual: f64,
    pub iterations: usize,
}

const DESIGN_TERMS: [&str; 6] = ["x^2", "y^2", "z^2", "x", "y", "z"];

/// Least-squares fit of an axis-aligned ellipsoid with free centroid.
///
/// Minimizes the sum over taxels of the squared algebraic residual
/// `(x-cx)^2/a^2 + (y-cy)^2/b^2 + (z-cz)^2/c^2 - 1`. A linear quadric fit
/// provides the start point for a Levenberg-Marquardt refinement.
pub fn fit_ellipsoid(layout: &TaxelLayout) -> Result<EllipsoidFit, GeometryError> {
    fit_points(layout.positions(), FitOptions::default())
}

pub fn fit_ellipsoid_with(
    layout: &TaxelLayout,
    options: FitOptions,
) -> Result<EllipsoidFit, GeometryError> {
    fit_points(layout.positions(), options)
}

fn fit_points(points: &[Point3], options: FitOptions) -> Result<EllipsoidFit, GeometryError> {
    // Shift and scale for conditioning; undone on the result.
    let n = points.len() as f64;
    let mean = points.iter().fold(Point3::zeros(), |acc, p| acc + p) / n;
    let scale = points.iter().map(|p| (p - mean).norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(GeometryError::DegenerateFit { direction: "x, y and z (all points coincide)".into() });
    }
    let local: Vec<Point3> = points.iter().map(|p| (p - mean) / scale).collect();

    let start = linear_quadric_fit(&local)?;
    let (params, iterations) = refine(&local, start, options.max_iterations);

    let model = EllipsoidModel::new(
        params[0].abs() * scale,
        params[1].abs() * scale,
        params[2].abs() * scale,
        mean + Point3::new(params[3], params[4], params[5]) * scale,
    )?;
    let mean_abs_residual =
        points.iter().map(|p| model.algebraic_residual(p).abs()).sum::<f64>() / n;
    if !(mean_abs_residual <= options.max_mean_residual) {
        return Err(GeometryError::FitFailed(format!(
            "mean algebraic residual {mean_abs_residual:.3e} exceeds {:.3e}",
            options.max_mean_residual
        )));
    }
    Ok(EllipsoidFit { model, mean_abs_residual, iterations })
}

/// Solves `A x^2 + B y^2 + C z^2 + D x + E y + F z = 1` in the least-squares
/// sense and converts to `(a, b, c, cx, cy, cz)`.
fn linear_quadric_fit(points: &[Point3]) -> Result<Vector6<f64>, GeometryError> {
    let mut normal = Matrix6::<f64>::zeros();
    let mut rhs = Vector6::<f64>::zeros();
    for p in points {
        let row = Vector6::new(p.x * p.x, p.y * p.y, p.z * p.z, p.x, p.y, p.z);
        normal += row * row.transpose();
        rhs += row;
    }
    let svd = normal.svd(true, true);
    let max_sv = svd.singular_values.max();
    let (min_idx, min_sv) = svd.singular_values.argmin();
    if !(min_sv > max_sv * 1e-12) {
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let direction = v_t.row(min_idx);
        let mut weights: Vec<(usize, f64)> =
            direction.iter().map(|w| w.abs()).enumerate().collect();
        weights.sort_by(|l, r| r.1.total_cmp(&l.1));
        let names: Vec<&str> = weights
            .iter()
            .take_while(|(_, w)| *w > 0.1)
            .map(|(i, _)| DESIGN_TERMS[*i])
            .collect();
        return Err(GeometryError::DegenerateFit { direction: names.join(" + ") });
    }
    let coeffs = svd
        .solve(&rhs, max_sv * 1e-14)
        .map_err(|e| GeometryError::FitFailed(e.to_string()))?;
    let (qa, qb, qc) = (coeffs[0], coeffs[1], coeffs[2]);
    if !(qa > 0.0 && qb > 0.0 && qc > 0.0) {
        return Err(GeometryError::FitFailed(format!(
            "points are not fit by an ellipsoid (quadric coefficients {qa:.3e}, {qb:.3e}, {qc:.3e})"
        )));
    }
    let center = Point3::new(-coeffs[3] / (2.0 * qa), -coeffs[4] / (2.0 * qb), -coeffs[5] / (2.0 * qc));
    let k = 1.0 + qa * center.x * center.x + qb * center.y * center.y + qc * center.z * center.z;
    if !(k > 0.0) {
        return Err(GeometryError::FitFailed("quadric has no real surface".into()));
    }
    Ok(Vector6::new(
        (k / qa).sqrt(),
        (k / qb).sqrt(),
        (k / qc).sqrt(),
        center.x,
        center.y,
        center.z,
    ))
}

fn residuals(points: &[Point3], params: &Vector6<f64>) -> f64 {
    let axes = Point3::new(params[0], params[1], params[2]);
    let center = Point3::new(params[3], params[4], params[5]);
    points
        .iter()
        .map(|p| {
            let r = (p - center).component_div(&axes).norm_squared() - 1.0;
            r * r
        })
        .sum()
}

/// Levenberg-Marquardt on the algebraic residual.
fn refine(points: &[Point3], start: Vector6<f64>, max_iterations: usize) -> (Vector6<f64>, usize) {
    let mut params = start;
    let mut cost = residuals(points, &params);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for _ in 0..max_iterations {
        iterations += 1;
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for p in points {
            let mut row = Vector6::<f64>::zeros();
            let mut r = -1.0;
            for axis in 0..3 {
                let s = params[axis];
                let d = p[axis] - params[axis + 3];
                r += d * d / (s * s);
                row[axis] = -2.0 * d * d / (s * s * s);
                row[axis + 3] = -2.0 * d / (s * s);
            }
            jtj += row * row.transpose();
            jtr += row * r;
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = params + step;
            let candidate_cost = residuals(points, &candidate);
            if candidate_cost.is_finite() && candidate_cost < cost {
                let converged = step.norm() <= 1e-14 * (1.0 + params.norm())
                    || cost - candidate_cost <= 1e-30 + 1e-15 * cost;
                params = candidate;
                cost = candidate_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if converged {
                    return (params, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (params, iterations)
}
