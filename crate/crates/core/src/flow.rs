//! Dense optical flow between tactile frames by Farnebäck polynomial
//! expansion.
//!
//! Every neighbourhood of a frame is approximated by a quadratic
//! `f(x) ~ x^T A x + b^T x + c`, fitted by Gaussian-weighted least squares
//! (computed with separable correlations). If the next frame is the
//! previous one shifted by `d`, the linear coefficients satisfy
//! `b2 = b1 - 2 A d`; the displacement is solved from that relation,
//! averaged over a window, refined iteratively and propagated coarse to
//! fine through an image pyramid.
//!
//! Flow vectors are in pixels per frame pair, `(vx, vy)` along
//! (columns, rows): content at `x` in the previous frame is found at
//! `x + v` in the next one.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use thiserror::Error;

use crate::frames::TactileFrame;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frame size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("projection mismatch: {0} vs {1}")]
    ProjectionMismatch(String, String),
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("initial flow has the wrong size")]
    InitSize,
    #[error("flow field has an empty validity mask")]
    EmptyMask,
    #[error("malformed flow CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarnebackConfig {
    /// Radius of the Gaussian window the displacement equations are
    /// averaged over; its sigma is `0.3 * (2 * radius + 1)`.
    pub window_radius: usize,
    /// Sigma of the polynomial-expansion applicability; the expansion
    /// kernel extends to `ceil(3 * sigma)`.
    pub poly_sigma: f64,
    pub levels: usize,
    pub pyramid_scale: f64,
    pub iterations: usize,
    /// Gaussian smoothing of the final field; 0 disables it.
    pub post_sigma: f64,
}

impl Default for FarnebackConfig {
    fn default() -> Self {
        Self {
            window_radius: 7,
            poly_sigma: 1.5,
            levels: 3,
            pyramid_scale: 0.5,
            iterations: 5,
            post_sigma: 1.1,
        }
    }
}

impl FarnebackConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |msg: String| Err(FlowError::InvalidConfig(msg));
        if self.levels < 1 {
            return bad("levels must be at least 1".into());
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad(format!("pyramid_scale must lie in (0, 1), got {}", self.pyramid_scale));
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.poly_sigma > 0.0 && self.poly_sigma.is_finite()) {
            return bad(format!("poly_sigma must be positive, got {}", self.poly_sigma));
        }
        if self.window_radius < 1 {
            return bad("window_radius must be at least 1".into());
        }
        if !(self.post_sigma >= 0.0 && self.post_sigma.is_finite()) {
            return bad(format!("post_sigma must be non-negative, got {}", self.post_sigma));
        }
        Ok(())
    }

    pub fn poly_radius(&self) -> usize {
        (3.0 * self.poly_sigma).ceil() as usize
    }

    fn window_sigma(&self) -> f64 {
        0.3 * (2 * self.window_radius + 1) as f64
    }
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn new(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0.0; h * w] }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }

    /// Bilinear sample with border clamping; `x` is the column coordinate.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
        let bottom = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Reflect-101 border index (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Correlates every row with `kernel` (centered, odd length).
fn correlate_rows(src: &Plane, kernel: &[f64]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let mut out = Plane::new(src.h, src.w);
    for y in 0..src.h {
        let row = &src.data[y * src.w..(y + 1) * src.w];
        for x in 0..src.w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as isize + k as isize - r, src.w)];
            }
            out.data[y * src.w + x] = acc;
        }
    }
    out
}

fn correlate_cols(src: &Plane, kernel: &[f64]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let mut out = Plane::new(src.h, src.w);
    for y in 0..src.h {
        for (k, kv) in kernel.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - r, src.h);
            let src_row = &src.data[sy * src.w..(sy + 1) * src.w];
            let dst = &mut out.data[y * src.w..(y + 1) * src.w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let kernel = gaussian_kernel(sigma, (3.0 * sigma).ceil().max(1.0) as usize);
    correlate_cols(&correlate_rows(src, &kernel), &kernel)
}

/// Quadratic model `x^T A x + b^T x + c` of every pixel neighbourhood;
/// `x` is (column offset, row offset).
#[derive(Debug, Clone)]
pub struct PolyExpansion {
    pub height: usize,
    pub width: usize,
    /// Per pixel `[a11, a12, a22]` of the symmetric matrix `A`.
    pub a: Vec<[f64; 3]>,
    pub b: Vec<[f64; 2]>,
    pub c: Vec<f64>,
}

impl PolyExpansion {
    pub fn coefficients(&self, row: usize, col: usize) -> ([[f64; 2]; 2], [f64; 2], f64) {
        let i = row * self.width + col;
        let [a11, a12, a22] = self.a[i];
        ([[a11, a12], [a12, a22]], self.b[i], self.c[i])
    }
}

/// Basis order used throughout: `1, x, y, x^2, y^2, x y`.
fn basis(x: f64, y: f64) -> Vector6<f64> {
    Vector6::new(1.0, x, y, x * x, y * y, x * y)
}

fn expand(plane: &Plane, sigma: f64, radius: usize) -> PolyExpansion {
    let offsets: Vec<f64> = (-(radius as isize)..=radius as isize).map(|i| i as f64).collect();
    let g: Vec<f64> = offsets.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let gx: Vec<f64> = g.iter().zip(&offsets).map(|(g, x)| g * x).collect();
    let gxx: Vec<f64> = g.iter().zip(&offsets).map(|(g, x)| g * x * x).collect();

    let mut gram = Matrix6::<f64>::zeros();
    for (j, &y) in offsets.iter().enumerate() {
        for (i, &x) in offsets.iter().enumerate() {
            let b = basis(x, y);
            gram += b * b.transpose() * (g[i] * g[j]);
        }
    }
    let inv = gram.try_inverse().expect("applicability Gram matrix is invertible");

    let r0 = correlate_rows(plane, &g);
    let r1 = correlate_rows(plane, &gx);
    let r2 = correlate_rows(plane, &gxx);
    let m00 = correlate_cols(&r0, &g);
    let m10 = correlate_cols(&r1, &g);
    let m01 = correlate_cols(&r0, &gx);
    let m20 = correlate_cols(&r2, &g);
    let m02 = correlate_cols(&r0, &gxx);
    let m11 = correlate_cols(&r1, &gx);

    let n = plane.h * plane.w;
    let mut out = PolyExpansion {
        height: plane.h,
        width: plane.w,
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
    };
    for i in 0..n {
        let moments =
            Vector6::new(m00.data[i], m10.data[i], m01.data[i], m20.data[i], m02.data[i], m11.data[i]);
        let r = inv * moments;
        out.c.push(r[0]);
        out.b.push([r[1], r[2]]);
        out.a.push([r[3], 0.5 * r[5], r[4]]);
    }
    out
}

fn frame_plane(frame: &TactileFrame) -> Plane {
    Plane { h: frame.height, w: frame.width, data: frame.intensity.clone() }
}

/// Per-pixel quadratic coefficients of `frame` at full resolution.
pub fn polynomial_expansion(frame: &TactileFrame, cfg: &FarnebackConfig) -> PolyExpansion {
    expand(&frame_plane(frame), cfg.poly_sigma, cfg.poly_radius())
}

/// Dense displacement field with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub mask: Vec<bool>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self { height, width, vx: vec![0.0; n], vy: vec![0.0; n], mask: vec![true; n] }
    }

    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.width + col;
        (self.vx[i], self.vy[i])
    }

    /// Mean vector over the mask (unweighted).
    pub fn masked_mean(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..self.vx.len() {
            if self.mask[i] {
                n += 1;
                sx += self.vx[i];
                sy += self.vy[i];
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vx.iter().zip(&self.vy).map(|(x, y)| x.hypot(*y)).fold(0.0, f64::max)
    }

    /// Plain-text `row,col,vx,vy` table of every pixel.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), FlowError> {
        writeln!(out, "row,col,vx,vy")?;
        for r in 0..self.height {
            for c in 0..self.width {
                let (vx, vy) = self.at(r, c);
                writeln!(out, "{r},{c},{vx:.9},{vy:.9}")?;
            }
        }
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Pixels with
    /// a non-zero vector form the mask.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, FlowError> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let err = |reason: &str| FlowError::Csv { line: i + 1, reason: reason.to_string() };
            if i == 0 {
                if line.trim() != "row,col,vx,vy" {
                    return Err(err("expected header row,col,vx,vy"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err("expected 4 columns"));
            }
            let r: usize = f[0].trim().parse().map_err(|_| err("bad row"))?;
            let c: usize = f[1].trim().parse().map_err(|_| err("bad col"))?;
            let vx: f64 = f[2].trim().parse().map_err(|_| err("bad vx"))?;
            let vy: f64 = f[3].trim().parse().map_err(|_| err("bad vy"))?;
            rows.push((r, c, vx, vy));
        }
        let height = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let width = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut field = Self::zeros(height, width);
        field.mask.iter_mut().for_each(|m| *m = false);
        for (r, c, vx, vy) in rows {
            let i = r * width + c;
            field.vx[i] = vx;
            field.vy[i] = vy;
            field.mask[i] = vx != 0.0 || vy != 0.0;
        }
        Ok(field)
    }

    /// `P6` overlay: the frame in gray with flow arrows every `step` pixels,
    /// lengths multiplied by `gain`.
    pub fn write_quiver_ppm<W: Write>(
        &self,
        frame: &TactileFrame,
        step: usize,
        gain: f64,
        mut out: W,
    ) -> Result<(), FlowError> {
        let (h, w) = (self.height, self.width);
        let mut rgb: Vec<[u8; 3]> = (0..h * w)
            .map(|i| {
                let g = (frame.intensity.get(i).copied().unwrap_or(0.0) * 255.0).round() as u8;
                [g, g, g]
            })
            .collect();
        let step = step.max(1);
        for r in (step / 2..h).step_by(step) {
            for c in (step / 2..w).step_by(step) {
                let i = r * w + c;
                if !self.mask[i] {
                    continue;
                }
                let (x1, y1) = (c as f64 + self.vx[i] * gain, r as f64 + self.vy[i] * gain);
                draw_line(&mut rgb, w, h, (c as f64, r as f64), (x1, y1), [255, 40, 40]);
                if let Some(p) = rgb.get_mut(i) {
                    *p = [40, 255, 40];
                }
            }
        }
        write!(out, "P6\n{w} {h}\n255\n")?;
        let bytes: Vec<u8> = rgb.into_iter().flatten().collect();
        out.write_all(&bytes)?;
        Ok(())
    }
}

fn draw_line(rgb: &mut [[u8; 3]], w: usize, h: usize, from: (f64, f64), to: (f64, f64), color: [u8; 3]) {
    let steps = ((to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = (from.0 + (to.0 - from.0) * t).round();
        let y = (from.1 + (to.1 - from.1) * t).round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
            rgb[y as usize * w + x as usize] = color;
        }
    }
}

/// Resamples `src` to `h x w` with bilinear interpolation, pixel centers
/// aligned.
fn resize(src: &Plane, h: usize, w: usize) -> Plane {
    let (sy, sx) = (src.h as f64 / h as f64, src.w as f64 / w as f64);
    let mut out = Plane::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            let fx = (x as f64 + 0.5) * sx - 0.5;
            out.data[y * w + x] = src.sample(fx, fy);
        }
    }
    out
}

struct Level {
    h: usize,
    w: usize,
    prev: PolyExpansion,
    next: PolyExpansion,
}

/// Pyramid sizes from coarsest to finest; levels too small for the
/// expansion kernel are dropped.
fn pyramid_sizes(h: usize, w: usize, cfg: &FarnebackConfig) -> Vec<(usize, f64)> {
    let min_size = 2 * cfg.poly_radius() + 1;
    let mut sizes = Vec::new();
    for k in 0..cfg.levels {
        let s = cfg.pyramid_scale.powi(k as i32);
        let (lh, lw) = ((h as f64 * s).round() as usize, (w as f64 * s).round() as usize);
        if k > 0 && (lh < min_size || lw < min_size) {
            break;
        }
        sizes.push((k, s));
    }
    sizes.reverse();
    sizes
}

fn level_plane(plane: &Plane, scale: f64) -> Plane {
    if scale == 1.0 {
        return plane.clone();
    }
    let blurred = gaussian_blur(plane, (1.0 / scale - 1.0) * 0.5);
    let h = (plane.h as f64 * scale).round() as usize;
    let w = (plane.w as f64 * scale).round() as usize;
    resize(&blurred, h, w)
}

/// Determinant regularization, matched to 8-bit intensity scaling.
const DET_EPS: f64 = 1e-3 / (255.0 * 255.0 * 255.0 * 255.0);

/// One Farnebäck update at a pyramid level.
fn update_flow(level: &Level, flow: &mut [(f64, f64)], cfg: &FarnebackConfig) {
    let (h, w) = (level.h, level.w);
    let n = h * w;
    let mut g11 = Plane::new(h, w);
    let mut g12 = Plane::new(h, w);
    let mut g22 = Plane::new(h, w);
    let mut h1 = Plane::new(h, w);
    let mut h2 = Plane::new(h, w);
    let next = &level.next;
    let sample = |field: &dyn Fn(usize) -> f64, x: f64, y: f64| -> f64 {
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = field(y0 * w + x0) * (1.0 - fx) + field(y0 * w + x1) * fx;
        let bottom = field(y1 * w + x0) * (1.0 - fx) + field(y1 * w + x1) * fx;
        top * (1.0 - fy) + bottom * fy
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = flow[i];
            let (tx, ty) = (x as f64 + dx, y as f64 + dy);
            if !(tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f64 && ty <= (h - 1) as f64) {
                continue;
            }
            let a2 = [
                sample(&|j| next.a[j][0], tx, ty),
                sample(&|j| next.a[j][1], tx, ty),
                sample(&|j| next.a[j][2], tx, ty),
            ];
            let b2 = [sample(&|j| next.b[j][0], tx, ty), sample(&|j| next.b[j][1], tx, ty)];
            let a1 = level.prev.a[i];
            let b1 = level.prev.b[i];
            let a11 = 0.5 * (a1[0] + a2[0]);
            let a12 = 0.5 * (a1[1] + a2[1]);
            let a22 = 0.5 * (a1[2] + a2[2]);
            let db1 = -0.5 * (b2[0] - b1[0]) + a11 * dx + a12 * dy;
            let db2 = -0.5 * (b2[1] - b1[1]) + a12 * dx + a22 * dy;
            g11.data[i] = a11 * a11 + a12 * a12;
            g12.data[i] = a12 * (a11 + a22);
            g22.data[i] = a12 * a12 + a22 * a22;
            h1.data[i] = a11 * db1 + a12 * db2;
            h2.data[i] = a12 * db1 + a22 * db2;
        }
    }
    let kernel = gaussian_kernel(cfg.window_sigma(), cfg.window_radius);
    let avg = |p: &Plane| correlate_cols(&correlate_rows(p, &kernel), &kernel);
    let (g11, g12, g22, h1, h2) = (avg(&g11), avg(&g12), avg(&g22), avg(&h1), avg(&h2));
    for i in 0..n {
        let det = g11.data[i] * g22.data[i] - g12.data[i] * g12.data[i] + DET_EPS;
        flow[i] = (
            (g22.data[i] * h1.data[i] - g12.data[i] * h2.data[i]) / det,
            (g11.data[i] * h2.data[i] - g12.data[i] * h1.data[i]) / det,
        );
    }
}

/// Flow from `prev` to `next`.
pub fn estimate_flow(
    prev: &TactileFrame,
    next: &TactileFrame,
    cfg: &FarnebackConfig,
    init: Option<&FlowField>,
) -> Result<FlowField, FlowError> {
    cfg.validate()?;
    if (prev.height, prev.width) != (next.height, next.width) {
        return Err(FlowError::SizeMismatch(prev.height, prev.width, next.height, next.width));
    }
    if prev.projection != next.projection {
        return Err(FlowError::ProjectionMismatch(prev.projection.to_string(), next.projection.to_string()));
    }
    let (h, w) = (prev.height, prev.width);
    if let Some(f) = init {
        if (f.height, f.width) != (h, w) {
            return Err(FlowError::InitSize);
        }
    }
    let p0 = frame_plane(prev);
    let p1 = frame_plane(next);

    let mut flow: Vec<(f64, f64)> = Vec::new();
    let (mut fh, mut fw) = (0usize, 0usize);
    for (k, (_, scale)) in pyramid_sizes(h, w, cfg).into_iter().enumerate() {
        let a = level_plane(&p0, scale);
        let b = level_plane(&p1, scale);
        let (lh, lw) = (a.h, a.w);
        flow = if k == 0 {
            match init {
                Some(f) => scale_flow(f, lh, lw, scale),
                None => vec![(0.0, 0.0); lh * lw],
            }
        } else {
            upscale(&flow, fh, fw, lh, lw)
        };
        let level = Level {
            h: lh,
            w: lw,
            prev: expand(&a, cfg.poly_sigma, cfg.poly_radius()),
            next: expand(&b, cfg.poly_sigma, cfg.poly_radius()),
        };
        for _ in 0..cfg.iterations {
            update_flow(&level, &mut flow, cfg);
        }
        fh = lh;
        fw = lw;
    }

    let mut vx = Plane { h, w, data: flow.iter().map(|f| f.0).collect() };
    let mut vy = Plane { h, w, data: flow.iter().map(|f| f.1).collect() };
    if cfg.post_sigma > 0.0 {
        vx = gaussian_blur(&vx, cfg.post_sigma);
        vy = gaussian_blur(&vy, cfg.post_sigma);
    }
    let joint: Vec<bool> = prev.mask.iter().zip(&next.mask).map(|(a, b)| *a && *b).collect();
    let mask = erode(&joint, h, w, cfg.window_radius);
    for i in 0..h * w {
        if !mask[i] || !vx.data[i].is_finite() || !vy.data[i].is_finite() {
            vx.data[i] = 0.0;
            vy.data[i] = 0.0;
        }
    }
    Ok(FlowField { height: h, width: w, vx: vx.data, vy: vy.data, mask })
}

fn scale_flow(f: &FlowField, h: usize, w: usize, scale: f64) -> Vec<(f64, f64)> {
    let vx = resize(&Plane { h: f.height, w: f.width, data: f.vx.clone() }, h, w);
    let vy = resize(&Plane { h: f.height, w: f.width, data: f.vy.clone() }, h, w);
    vx.data.iter().zip(&vy.data).map(|(x, y)| (x * scale, y * scale)).collect()
}

fn upscale(flow: &[(f64, f64)], h: usize, w: usize, nh: usize, nw: usize) -> Vec<(f64, f64)> {
    let vx = resize(&Plane { h, w, data: flow.iter().map(|f| f.0).collect() }, nh, nw);
    let vy = resize(&Plane { h, w, data: flow.iter().map(|f| f.1).collect() }, nh, nw);
    let (sx, sy) = (nw as f64 / w as f64, nh as f64 / h as f64);
    vx.data.iter().zip(&vy.data).map(|(x, y)| (x * sx, y * sy)).collect()
}

/// Keeps pixels whose whole `(2r+1)^2` neighbourhood is inside `mask` and
/// inside the image.
fn erode(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    // distance to the nearest invalid pixel along rows, then columns
    let mut horiz = vec![false; h * w];
    for y in 0..h {
        let mut run = 0usize;
        let mut left = vec![0usize; w];
        for x in 0..w {
            run = if mask[y * w + x] { run + 1 } else { 0 };
            left[x] = run;
        }
        let mut run = 0usize;
        for x in (0..w).rev() {
            run = if mask[y * w + x] { run + 1 } else { 0 };
            horiz[y * w + x] = left[x] > r && run > r;
        }
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        let mut up = vec![0usize; h];
        let mut run = 0usize;
        for y in 0..h {
            run = if horiz[y * w + x] { run + 1 } else { 0 };
            up[y] = run;
        }
        let mut run = 0usize;
        for y in (0..h).rev() {
            run = if horiz[y * w + x] { run + 1 } else { 0 };
            out[y * w + x] = up[y] > r && run > r;
        }
    }
    out
}

/// Mean over the mask of `|I_next(x + v) - I_prev(x)|`.
pub fn warp_residual(prev: &TactileFrame, next: &TactileFrame, flow: &FlowField) -> Option<f64> {
    let p1 = frame_plane(next);
    let mut total = 0.0;
    let mut n = 0usize;
    for r in 0..flow.height {
        for c in 0..flow.width {
            let i = r * flow.width + c;
            if !flow.mask[i] {
                continue;
            }
            let warped = p1.sample(c as f64 + flow.vx[i], r as f64 + flow.vy[i]);
            total += (warped - prev.intensity[i]).abs();
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

/// Default magnitude threshold for coverage, pixels per frame.
pub const COVERAGE_THRESHOLD: f64 = 0.1;

/// Summary of a flow field or a set of fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateFlow {
    /// Unit vector, or zero when the mean vanishes.
    pub direction: [f64; 2],
    pub magnitude: f64,
    /// Share of masked pixels whose magnitude exceeds the threshold.
    pub coverage: f64,
}

/// Magnitude-weighted mean of the masked vectors of `fields`.
pub fn aggregate_fields<'a>(
    fields: impl IntoIterator<Item = &'a FlowField>,
    threshold: f64,
) -> Result<AggregateFlow, FlowError> {
    let (mut sx, mut sy, mut weight) = (0.0, 0.0, 0.0);
    let (mut masked, mut moving) = (0usize, 0usize);
    for f in fields {
        for i in 0..f.vx.len() {
            if !f.mask[i] {
                continue;
            }
            masked += 1;
            let m = f.vx[i].hypot(f.vy[i]);
            if m > threshold {
                moving += 1;
            }
            sx += m * f.vx[i];
            sy += m * f.vy[i];
            weight += m;
        }
    }
    if masked == 0 {
        return Err(FlowError::EmptyMask);
    }
    let (mx, my) = if weight > 0.0 { (sx / weight, sy / weight) } else { (0.0, 0.0) };
    let magnitude = mx.hypot(my);
    let direction = if magnitude > 0.0 { [mx / magnitude, my / magnitude] } else { [0.0, 0.0] };
    Ok(AggregateFlow { direction, magnitude, coverage: moving as f64 / masked as f64 })
}

pub fn aggregate(flow: &FlowField) -> Result<AggregateFlow, FlowError> {
    aggregate_fields([flow], COVERAGE_THRESHOLD)
}

/// Dense weighted least-squares fit of the quadratic model at one pixel,
/// solved from the normal equations over the reflect-padded window.
#[doc(hidden)]
pub fn expansion_at_dense(frame: &TactileFrame, cfg: &FarnebackConfig, row: usize, col: usize) -> [f64; 6] {
    let r = cfg.poly_radius() as isize;
    let s = cfg.poly_sigma;
    let mut ata = DMatrix::<f64>::zeros(6, 6);
    let mut atb = DVector::<f64>::zeros(6);
    for dy in -r..=r {
        for dx in -r..=r {
            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * s * s)).exp();
            let y = reflect(row as isize + dy, frame.height);
            let x = reflect(col as isize + dx, frame.width);
            let f = frame.at(y, x);
            let b = basis(dx as f64, dy as f64);
            for i in 0..6 {
                atb[i] += wgt * b[i] * f;
                for j in 0..6 {
                    ata[(i, j)] += wgt * b[i] * b[j];
                }
            }
        }
    }
    let sol = ata.lu().solve(&atb).expect("normal equations are regular");
    [sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]]
}
