//! Tactile surface construction and orthographic tactile frames.
//!
//! Each grid site of the core is pushed outward along its normal by its
//! interpolated impedance times a scale factor. The displaced surface is
//! triangulated along the grid and rasterized into a depth map for one
//! camera plane; depth along the camera axis becomes frame intensity after
//! normalization with bounds shared by the whole sequence.
//!
//! Frame axes: column index follows the first in-plane world axis and row
//! index the second, both increasing (`top-xy`: columns = x, rows = y;
//! `left-yz` / `right-yz`: columns = y, rows = z).

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{EllipsoidModel, Point3};
use crate::interpolation::{GridSpec, SurfaceField};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("normalization bounds are degenerate (lo = {lo}, hi = {hi})")]
    DegenerateBounds { lo: f64, hi: f64 },
    #[error("no surface point falls inside any frame")]
    EmptySequence,
    #[error("invalid projection spec: {0}")]
    InvalidSpec(String),
    #[error("unknown projection {0:?} (expected top, left or right)")]
    UnknownProjection(String),
    #[error("malformed image: {0}")]
    Image(String),
    #[error("malformed frame metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Camera plane of a tactile frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Projection {
    /// Camera above the core looking down `-z`; frame plane x-y.
    Top,
    /// Left half (`x < cx`) seen from `-x`; frame plane y-z.
    Left,
    /// Right half (`x >= cx`) seen from `+x`; frame plane y-z.
    Right,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Top, Projection::Left, Projection::Right];

    pub fn id(self) -> &'static str {
        match self {
            Projection::Top => "top-xy",
            Projection::Left => "left-yz",
            Projection::Right => "right-yz",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Projection::Top => "top",
            Projection::Left => "left",
            Projection::Right => "right",
        }
    }

    /// `(u, v, depth)` of a world point; larger depth is nearer the camera.
    pub fn coords(self, p: &Point3) -> (f64, f64, f64) {
        match self {
            Projection::Top => (p.x, p.y, p.z),
            Projection::Left => (p.y, p.z, -p.x),
            Projection::Right => (p.y, p.z, p.x),
        }
    }

    /// Whether surface parameter `phi` belongs to the half this camera sees.
    pub fn covers_phi(self, phi: f64) -> bool {
        match self {
            Projection::Top => true,
            Projection::Left => phi < 1.5 * PI,
            Projection::Right => phi >= 1.5 * PI,
        }
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Projection {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, FrameError> {
        match s {
            "top" | "top-xy" => Ok(Projection::Top),
            "left" | "left-yz" => Ok(Projection::Left),
            "right" | "right-yz" => Ok(Projection::Right),
            other => Err(FrameError::UnknownProjection(other.to_string())),
        }
    }
}

/// The core pushed outward along its normals by `impedance * scale`.
#[derive(Debug, Clone)]
pub struct TactileSurface {
    pub grid: GridSpec,
    pub base: Vec<Point3>,
    pub normals: Vec<Point3>,
    pub displaced: Vec<Point3>,
    pub impedance: Vec<f64>,
    pub scale: f64,
}

/// Base points and normals of a grid, reusable across time steps.
#[derive(Debug, Clone)]
pub struct SurfaceGeometry {
    grid: GridSpec,
    base: Vec<Point3>,
    normals: Vec<Point3>,
}

impl SurfaceGeometry {
    pub fn new(model: &EllipsoidModel, grid: GridSpec) -> Self {
        let params: Vec<_> = grid.params().collect();
        Self {
            grid,
            base: params.iter().map(|&p| model.param_to_point(p)).collect(),
            normals: params.iter().map(|&p| model.surface_normal(p)).collect(),
        }
    }

    pub fn displace(&self, field: &SurfaceField, scale: f64) -> TactileSurface {
        assert_eq!(field.grid, self.grid, "field grid does not match surface grid");
        let displaced = self
            .base
            .iter()
            .zip(&self.normals)
            .zip(&field.values)
            .map(|((b, n), v)| b + n * (v * scale))
            .collect();
        TactileSurface {
            grid: self.grid,
            base: self.base.clone(),
            normals: self.normals.clone(),
            displaced,
            impedance: field.values.clone(),
            scale,
        }
    }
}

pub fn build_tactile_surface(field: &SurfaceField, model: &EllipsoidModel, scale: f64) -> TactileSurface {
    SurfaceGeometry::new(model, field.grid).displace(field, scale)
}

/// Displacement scale that maps `max_impedance` to `fraction * c`.
pub fn calibrate_scale(model: &EllipsoidModel, max_impedance: f64, fraction: f64) -> f64 {
    if max_impedance > 0.0 && max_impedance.is_finite() {
        fraction * model.c / max_impedance
    } else {
        0.0
    }
}

/// Axis-aligned window of the frame plane, millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSpec {
    pub projection: Projection,
    pub height: usize,
    pub width: usize,
    pub window: Window,
}

impl ProjectionSpec {
    pub fn new(
        projection: Projection,
        height: usize,
        width: usize,
        window: Window,
    ) -> Result<Self, FrameError> {
        if height < 2 || width < 2 {
            return Err(FrameError::InvalidSpec(format!("resolution {height}x{width} too small")));
        }
        let Window { u_min, u_max, v_min, v_max } = window;
        if !(u_max > u_min && v_max > v_min) || ![u_min, u_max, v_min, v_max].iter().all(|v| v.is_finite()) {
            return Err(FrameError::InvalidSpec(format!("degenerate window {window:?}")));
        }
        Ok(Self { projection, height, width, window })
    }

    /// Square-pixel window around the visible half of `model`, padded by
    /// `margin` times the largest semi-axis on every side.
    pub fn fit(projection: Projection, model: &EllipsoidModel, height: usize, width: usize, margin: f64) -> Result<Self, FrameError> {
        let c = model.centroid;
        let (mut u0, mut u1, mut v0, mut v1) = match projection {
            Projection::Top => (c.x - model.a, c.x + model.a, c.y - model.b, c.y),
            Projection::Left | Projection::Right => (c.y - model.b, c.y, c.z - model.c, c.z + model.c),
        };
        let pad = margin * model.a.max(model.b).max(model.c);
        u0 -= pad;
        u1 += pad;
        v0 -= pad;
        v1 += pad;
        // equal millimeters per pixel on both axes
        let per_px = ((u1 - u0) / width as f64).max((v1 - v0) / height as f64);
        let (du, dv) = (per_px * width as f64 - (u1 - u0), per_px * height as f64 - (v1 - v0));
        let window = Window { u_min: u0 - du / 2.0, u_max: u1 + du / 2.0, v_min: v0 - dv / 2.0, v_max: v1 + dv / 2.0 };
        Self::new(projection, height, width, window)
    }

    /// Pixel-space coordinates (column, row) of a frame-plane point;
    /// pixel `(r, c)` has its center at `(c + 0.5, r + 0.5)`.
    pub fn to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let w = &self.window;
        (
            (u - w.u_min) / (w.u_max - w.u_min) * self.width as f64,
            (v - w.v_min) / (w.v_max - w.v_min) * self.height as f64,
        )
    }

    /// Millimeters per pixel along columns and rows.
    pub fn pixel_size(&self) -> (f64, f64) {
        let w = &self.window;
        ((w.u_max - w.u_min) / self.width as f64, (w.v_max - w.v_min) / self.height as f64)
    }
}

/// Nearest-to-camera depth per pixel, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub projection: Projection,
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMap {
    /// Range of depths over covered pixels.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.depth.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(d, _)| *d);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }

    pub fn normalize(&self, bounds: NormBounds, timestamp: Option<f64>) -> TactileFrame {
        let span = bounds.hi - bounds.lo;
        let intensity = self
            .depth
            .iter()
            .zip(&self.mask)
            .map(|(d, &m)| if m { ((d - bounds.lo) / span).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        TactileFrame {
            projection: self.projection,
            height: self.height,
            width: self.width,
            intensity,
            mask: self.mask.clone(),
            bounds,
            timestamp,
        }
    }
}

/// Depth range mapped onto `[0, 1]`, shared by all frames of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBounds {
    pub lo: f64,
    pub hi: f64,
}

impl NormBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, FrameError> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(FrameError::DegenerateBounds { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn from_depth_maps<'a>(maps: impl IntoIterator<Item = &'a DepthMap>) -> Result<Self, FrameError> {
        let (lo, hi) = maps
            .into_iter()
            .filter_map(DepthMap::range)
            .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
            .ok_or(FrameError::EmptySequence)?;
        Self::new(lo, hi)
    }
}

/// Grayscale projection of the tactile surface with its silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub projection: Projection,
    pub height: usize,
    pub width: usize,
    /// Row-major intensities in `[0, 1]`.
    pub intensity: Vec<f64>,
    pub mask: Vec<bool>,
    pub bounds: NormBounds,
    pub timestamp: Option<f64>,
}

impl TactileFrame {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.intensity[row * self.width + col]
    }

    /// Builds a frame from raw intensities with a full silhouette; used for
    /// synthetic inputs to the flow estimator.
    pub fn from_intensity(height: usize, width: usize, intensity: Vec<f64>) -> Self {
        assert_eq!(intensity.len(), height * width);
        Self {
            projection: Projection::Top,
            height,
            width,
            intensity,
            mask: vec![true; height * width],
            bounds: NormBounds { lo: 0.0, hi: 1.0 },
            timestamp: None,
        }
    }

    /// 8-bit binary graymap (`P5`).
    pub fn write_pgm<W: Write>(&self, out: W) -> Result<(), FrameError> {
        let bytes: Vec<u8> = self.intensity.iter().map(|v| (v * 255.0).round() as u8).collect();
        write_pgm(out, self.width, self.height, &bytes)
    }

    /// Silhouette as a `P5` image (255 inside, 0 outside).
    pub fn write_mask_pgm<W: Write>(&self, out: W) -> Result<(), FrameError> {
        let bytes: Vec<u8> = self.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        write_pgm(out, self.width, self.height, &bytes)
    }

    /// Sidecar `key=value` metadata.
    pub fn metadata(&self) -> String {
        let mut s = format!(
            "projection={}\nheight={}\nwidth={}\nnorm_lo={:.17e}\nnorm_hi={:.17e}\n",
            self.projection.id(),
            self.height,
            self.width,
            self.bounds.lo,
            self.bounds.hi
        );
        if let Some(t) = self.timestamp {
            s.push_str(&format!("timestamp={t:.9}\n"));
        }
        s
    }

    /// Reassembles a frame from its image, optional mask image and metadata.
    /// Intensities are quantized to 8 bits.
    pub fn from_files<R1: Read, R2: Read>(
        image: R1,
        mask: Option<R2>,
        metadata: &str,
    ) -> Result<Self, FrameError> {
        let (width, height, pixels) = read_pgm(image)?;
        let mask = match mask {
            Some(m) => {
                let (mw, mh, mp) = read_pgm(m)?;
                if (mw, mh) != (width, height) {
                    return Err(FrameError::Image("mask size differs from frame".into()));
                }
                mp.iter().map(|&b| b > 127).collect()
            }
            None => vec![true; width * height],
        };
        let mut projection = None;
        let mut lo = None;
        let mut hi = None;
        let mut timestamp = None;
        for line in metadata.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FrameError::Metadata(format!("expected key=value, got {line:?}")))?;
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| FrameError::Metadata(format!("bad number for {key}")));
            match key.trim() {
                "projection" => projection = Some(value.trim().parse()?),
                "norm_lo" => lo = Some(num(value)?),
                "norm_hi" => hi = Some(num(value)?),
                "timestamp" => timestamp = Some(num(value)?),
                "height" | "width" => {}
                other => return Err(FrameError::Metadata(format!("unknown key {other:?}"))),
            }
        }
        let projection = projection.ok_or_else(|| FrameError::Metadata("missing projection".into()))?;
        let bounds = NormBounds::new(
            lo.ok_or_else(|| FrameError::Metadata("missing norm_lo".into()))?,
            hi.ok_or_else(|| FrameError::Metadata("missing norm_hi".into()))?,
        )?;
        Ok(Self {
            projection,
            height,
            width,
            intensity: pixels.iter().map(|&b| b as f64 / 255.0).collect(),
            mask,
            bounds,
            timestamp,
        })
    }
}

pub(crate) fn write_pgm<W: Write>(mut out: W, width: usize, height: usize, bytes: &[u8]) -> Result<(), FrameError> {
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(bytes)?;
    Ok(())
}

/// Reads an 8-bit `P5` image.
pub fn read_pgm<R: Read>(input: R) -> Result<(usize, usize, Vec<u8>), FrameError> {
    let mut reader = std::io::BufReader::new(input);
    let mut header = Vec::new();
    while header.len() < 4 {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(FrameError::Image("truncated header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        header.extend(content.split_whitespace().map(str::to_string));
    }
    if header[0] != "P5" {
        return Err(FrameError::Image(format!("expected P5, found {}", header[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| FrameError::Image(format!("bad header field {s:?}")));
    let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval != 255 {
        return Err(FrameError::Image(format!("unsupported maxval {maxval}")));
    }
    let mut pixels = vec![0u8; width * height];
    reader
        .read_exact(&mut pixels)
        .map_err(|_| FrameError::Image("pixel data truncated".into()))?;
    Ok((width, height, pixels))
}

/// Rasterizes the displaced surface for one camera. Grid quads are split
/// into two triangles; a quad belongs to the camera's half when the `phi`
/// of its center does.
pub fn depth_map(surface: &TactileSurface, spec: &ProjectionSpec) -> DepthMap {
    let (h, w) = (spec.height, spec.width);
    let mut depth = vec![f64::NEG_INFINITY; h * w];
    let grid = surface.grid;
    let projected: Vec<(f64, f64, f64)> = surface
        .displaced
        .iter()
        .map(|p| {
            let (u, v, d) = spec.projection.coords(p);
            let (x, y) = spec.to_pixel(u, v);
            (x, y, d)
        })
        .collect();
    for row in 0..grid.n_theta - 1 {
        for col in 0..grid.n_phi - 1 {
            let phi_mid = 0.5 * (grid.param(row, col).phi + grid.param(row, col + 1).phi);
            if !spec.projection.covers_phi(phi_mid) {
                continue;
            }
            let i00 = row * grid.n_phi + col;
            let (i01, i10, i11) = (i00 + 1, i00 + grid.n_phi, i00 + grid.n_phi + 1);
            rasterize(&mut depth, w, h, [projected[i00], projected[i01], projected[i11]]);
            rasterize(&mut depth, w, h, [projected[i00], projected[i11], projected[i10]]);
        }
    }
    let mask: Vec<bool> = depth.iter().map(|d| d.is_finite()).collect();
    for d in depth.iter_mut().filter(|d| !d.is_finite()) {
        *d = 0.0;
    }
    DepthMap { projection: spec.projection, height: h, width: w, depth, mask }
}

fn rasterize(depth: &mut [f64], w: usize, h: usize, tri: [(f64, f64, f64); 3]) {
    let [(x0, y0, d0), (x1, y1, d1), (x2, y2, d2)] = tri;
    let area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    if area.abs() < 1e-12 {
        return;
    }
    let min_x = x0.min(x1).min(x2).floor().max(0.0) as usize;
    let max_x = (x0.max(x1).max(x2).ceil() as isize).clamp(0, w as isize) as usize;
    let min_y = y0.min(y1).min(y2).floor().max(0.0) as usize;
    let max_y = (y0.max(y1).max(y2).ceil() as isize).clamp(0, h as isize) as usize;
    // shared edges are sampled by both neighbours; the max keeps it watertight
    let eps = -1e-9;
    for py in min_y..max_y {
        let cy = py as f64 + 0.5;
        for px in min_x..max_x {
            let cx = px as f64 + 0.5;
            let w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) / area;
            let w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) / area;
            let w2 = 1.0 - w0 - w1;
            if w0 < eps || w1 < eps || w2 < eps {
                continue;
            }
            let d = w0 * d0 + w1 * d1 + w2 * d2;
            let slot = &mut depth[py * w + px];
            if d > *slot {
                *slot = d;
            }
        }
    }
}

/// Depth map followed by normalization with `bounds`.
pub fn render_frame(surface: &TactileSurface, spec: &ProjectionSpec, bounds: NormBounds) -> TactileFrame {
    depth_map(surface, spec).normalize(bounds, None)
}
