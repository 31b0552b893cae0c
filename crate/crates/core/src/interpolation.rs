//! Geodesic Gaussian-kernel interpolation of taxel values over the core.
//!
//! A grid site `s` receives `sum_i k(s, t_i) p_i / sum_i k(s, t_i)` with
//! `k(s, t) = exp(-d(s, t) / (2 sigma^2))`, where `d` is the surface
//! distance. The weights depend on geometry only, so
//! [`InterpolationWeights`] computes them once and reuses them for every
//! sample of a recording.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{EllipsoidModel, GeodesicPath, SurfaceParam, DEFAULT_GEODESIC_SEGMENTS};

#[derive(Debug, Error)]
pub enum InterpolationError {
    #[error("kernel sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("geodesic segment count must be at least 1")]
    InvalidSegments,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no taxels given")]
    NoTaxels,
    #[error("expected {expected} taxel values, got {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("non-finite taxel value at index {0}")]
    NonFiniteValue(usize),
    #[error(
        "kernel weights vanish at grid site ({row}, {col}) (theta = {theta:.4}, phi = {phi:.4}); sigma is too small"
    )]
    WeightUnderflow { row: usize, col: usize, theta: f64, phi: f64 },
}

/// How the surface distance enters the Gaussian exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelExponent {
    /// `exp(-d / (2 sigma^2))`
    #[default]
    Distance,
    /// `exp(-d^2 / (2 sigma^2))`
    SquaredDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Kernel width in millimeters.
    pub sigma: f64,
    pub n_segments: usize,
    pub exponent: KernelExponent,
    pub path: GeodesicPath,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            n_segments: DEFAULT_GEODESIC_SEGMENTS,
            exponent: KernelExponent::Distance,
            path: GeodesicPath::CentralSection,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), InterpolationError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(InterpolationError::InvalidSigma(self.sigma));
        }
        if self.n_segments == 0 {
            return Err(InterpolationError::InvalidSegments);
        }
        Ok(())
    }

    fn weight_from_distance(&self, d: f64) -> f64 {
        let arg = match self.exponent {
            KernelExponent::Distance => d,
            KernelExponent::SquaredDistance => d * d,
        };
        (-arg / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Kernel weight between two surface points, in `(0, 1]` unless it
/// underflows.
pub fn kernel_weight(
    model: &EllipsoidModel,
    p: SurfaceParam,
    q: SurfaceParam,
    cfg: &KernelConfig,
) -> f64 {
    cfg.weight_from_distance(model.polyline_distance(p, q, cfg.n_segments, cfg.path))
}

/// Regular `theta x phi` grid of sample sites, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::full(64, 128)
    }
}

impl GridSpec {
    /// Grid over the whole mapping domain.
    pub fn full(n_theta: usize, n_phi: usize) -> Self {
        Self { n_theta, n_phi, theta_range: (0.0, PI), phi_range: (PI, TAU) }
    }

    pub fn validate(&self) -> Result<(), InterpolationError> {
        if self.n_theta < 2 || self.n_phi < 2 {
            return Err(InterpolationError::InvalidGrid(format!(
                "need at least 2x2 sites, got {}x{}",
                self.n_theta, self.n_phi
            )));
        }
        let (t0, t1) = self.theta_range;
        let (p0, p1) = self.phi_range;
        if !(0.0 <= t0 && t0 < t1 && t1 <= PI) || !(PI <= p0 && p0 < p1 && p1 <= TAU) {
            return Err(InterpolationError::InvalidGrid(format!(
                "ranges theta {:?}, phi {:?} leave the mapping domain",
                self.theta_range, self.phi_range
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn param(&self, row: usize, col: usize) -> SurfaceParam {
        let lerp = |(lo, hi): (f64, f64), i: usize, n: usize| {
            if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }
        };
        SurfaceParam {
            theta: lerp(self.theta_range, row, self.n_theta),
            phi: lerp(self.phi_range, col, self.n_phi),
        }
    }

    /// Sites in row-major order (theta rows, phi columns).
    pub fn params(&self) -> impl Iterator<Item = SurfaceParam> + '_ {
        (0..self.n_theta).flat_map(move |r| (0..self.n_phi).map(move |c| self.param(r, c)))
    }
}

/// Interpolated impedance at every grid site, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl SurfaceField {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.n_phi + col]
    }

    pub fn uniform(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }
}

/// Unnormalized kernel weights for every (site, taxel) pair.
#[derive(Debug, Clone)]
pub struct InterpolationWeights {
    grid: GridSpec,
    n_taxels: usize,
    weights: Vec<f64>,
    totals: Vec<f64>,
}

impl InterpolationWeights {
    pub fn new(
        model: &EllipsoidModel,
        taxels: &[SurfaceParam],
        grid: GridSpec,
        cfg: &KernelConfig,
    ) -> Result<Self, InterpolationError> {
        cfg.validate()?;
        grid.validate()?;
        if taxels.is_empty() {
            return Err(InterpolationError::NoTaxels);
        }
        let sites: Vec<SurfaceParam> = grid.params().collect();
        let weights: Vec<f64> = sites
            .par_iter()
            .flat_map_iter(|&s| taxels.iter().map(move |&t| kernel_weight(model, s, t, cfg)))
            .collect();
        let totals: Vec<f64> =
            weights.chunks(taxels.len()).map(|row| row.iter().sum()).collect();
        for (idx, &total) in totals.iter().enumerate() {
            if !(total > 0.0 && total.is_finite()) {
                let (row, col) = (idx / grid.n_phi, idx % grid.n_phi);
                let p = grid.param(row, col);
                return Err(InterpolationError::WeightUnderflow {
                    row,
                    col,
                    theta: p.theta,
                    phi: p.phi,
                });
            }
        }
        Ok(Self { grid, n_taxels: taxels.len(), weights, totals })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_taxels(&self) -> usize {
        self.n_taxels
    }

    /// Weight of taxel `taxel` at site index `site`.
    pub fn weight(&self, site: usize, taxel: usize) -> f64 {
        self.weights[site * self.n_taxels + taxel]
    }

    pub fn interpolate(&self, values: &[f64]) -> Result<SurfaceField, InterpolationError> {
        let (lo, hi) = value_bounds(values, self.n_taxels)?;
        let values = self
            .weights
            .chunks(self.n_taxels)
            .zip(&self.totals)
            .map(|(row, total)| weighted_mean(row, values, *total, lo, hi))
            .collect();
        Ok(SurfaceField { grid: self.grid, values })
    }
}

fn value_bounds(values: &[f64], expected: usize) -> Result<(f64, f64), InterpolationError> {
    if values.len() != expected {
        return Err(InterpolationError::ValueCount { expected, found: values.len() });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(InterpolationError::NonFiniteValue(i));
    }
    Ok(values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

/// The ratio is a convex combination of `values`; rounding can push it a
/// few ulps past the extremes, so it is clamped back.
fn weighted_mean(weights: &[f64], values: &[f64], total: f64, lo: f64, hi: f64) -> f64 {
    let acc: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    (acc / total).clamp(lo, hi)
}

/// Interpolates without a weight cache, evaluating every kernel weight on
/// the fly.
pub fn interpolate_field(
    model: &EllipsoidModel,
    taxels: &[SurfaceParam],
    values: &[f64],
    grid: GridSpec,
    cfg: &KernelConfig,
) -> Result<SurfaceField, InterpolationError> {
    cfg.validate()?;
    grid.validate()?;
    if taxels.is_empty() {
        return Err(InterpolationError::NoTaxels);
    }
    let (lo, hi) = value_bounds(values, taxels.len())?;
    let mut out = Vec::with_capacity(grid.len());
    for row in 0..grid.n_theta {
        for col in 0..grid.n_phi {
            let site = grid.param(row, col);
            let weights: Vec<f64> =
                taxels.iter().map(|&t| kernel_weight(model, site, t, cfg)).collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(InterpolationError::WeightUnderflow {
                    row,
                    col,
                    theta: site.theta,
                    phi: site.phi,
                });
            }
            out.push(weighted_mean(&weights, values, total, lo, hi));
        }
    }
    Ok(SurfaceField { grid, values: out })
}
