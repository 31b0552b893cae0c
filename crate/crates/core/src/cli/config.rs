//! `key=value` pipeline configuration.

use std::fmt::Write as _;

use crate::flow::{FarnebackConfig, COVERAGE_THRESHOLD};
use crate::frames::Projection;
use crate::geometry::{GeodesicPath, DEFAULT_LAYOUT_SLACK};
use crate::interpolation::{GridSpec, KernelConfig, KernelExponent};
use crate::segmentation::{MeanShift, PeakConfig};
use crate::smoothing::SmootherConfig;

use super::CliError;

/// How a resting level is removed from the impedances before they displace
/// the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Use the readings as they are.
    None,
    /// Subtract the smallest reading of any taxel over the whole recording.
    GlobalMin,
    /// Subtract each taxel's first reading.
    FirstSample,
}

impl BaselineMode {
    fn name(self) -> &'static str {
        match self {
            BaselineMode::None => "none",
            BaselineMode::GlobalMin => "global-min",
            BaselineMode::FirstSample => "first-sample",
        }
    }
}

/// Segmentation settings in seconds; resolved against the sample rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSettings {
    pub enabled: bool,
    pub min_prominence: Option<f64>,
    pub min_separation_s: f64,
    pub half_width_s: f64,
    /// Running-mean window in samples; `None` subtracts the global mean.
    pub mean_shift_window: Option<usize>,
}

impl Default for SegmentSettings {
    fn default() -> Self {
        Self { enabled: true, min_prominence: None, min_separation_s: 0.25, half_width_s: 0.5, mean_shift_window: None }
    }
}

impl SegmentSettings {
    pub fn peak_config(&self, rate: f64) -> PeakConfig {
        let samples = |s: f64| ((s * rate).round() as usize).max(1);
        PeakConfig {
            min_prominence: self.min_prominence,
            min_separation: samples(self.min_separation_s),
            half_width: samples(self.half_width_s),
            mean_shift: self.mean_shift_window.map_or(MeanShift::Whole, MeanShift::Running),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub smoother: SmootherConfig,
    pub kernel: KernelConfig,
    pub grid: GridSpec,
    pub projections: Vec<Projection>,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Padding around the core in each frame, as a fraction of the largest
    /// semi-axis.
    pub frame_margin: f64,
    /// Largest displacement as a fraction of `c` when the scale is derived
    /// from the data.
    pub displacement_fraction: f64,
    /// Fixed millimeters per count; overrides the fraction.
    pub displacement_scale: Option<f64>,
    pub baseline: BaselineMode,
    pub flow: FarnebackConfig,
    /// Frame distance of each flow pair.
    pub flow_stride: usize,
    /// Compute flow over the whole recording, ignoring segments.
    pub whole_sequence: bool,
    pub coverage_threshold: f64,
    pub segments: SegmentSettings,
    pub layout_slack: f64,
    pub export_frames: bool,
    pub export_flow_csv: bool,
    pub export_quiver: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            smoother: SmootherConfig::default(),
            kernel: KernelConfig::default(),
            grid: GridSpec::full(64, 128),
            projections: vec![Projection::Top, Projection::Left, Projection::Right],
            frame_height: 128,
            frame_width: 128,
            frame_margin: 0.05,
            displacement_fraction: 0.3,
            displacement_scale: None,
            baseline: BaselineMode::GlobalMin,
            flow: FarnebackConfig::default(),
            flow_stride: 1,
            whole_sequence: false,
            coverage_threshold: COVERAGE_THRESHOLD,
            segments: SegmentSettings::default(),
            layout_slack: DEFAULT_LAYOUT_SLACK,
            export_frames: true,
            export_flow_csv: false,
            export_quiver: true,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config { field: field.to_string(), reason: reason.into() }
}

fn parse_f64(field: &str, v: &str) -> Result<f64, CliError> {
    v.parse::<f64>().map_err(|_| invalid(field, format!("'{v}' is not a number")))
}

fn parse_usize(field: &str, v: &str) -> Result<usize, CliError> {
    v.parse::<usize>().map_err(|_| invalid(field, format!("'{v}' is not a non-negative integer")))
}

fn parse_bool(field: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(field, format!("'{v}' is not a boolean"))),
    }
}

fn auto_or<T>(v: &str, parse: impl FnOnce(&str) -> Result<T, CliError>) -> Result<Option<T>, CliError> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Usage(format!(
                "config line {}: expected key=value, got '{line}'",
                i + 1
            )))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "smoother.r_scale" => self.smoother.r_scale = parse_f64(key, v)?,
            "smoother.q_scale" => self.smoother.q_scale = parse_f64(key, v)?,
            "smoother.s0_scale" => self.smoother.s0_scale = parse_f64(key, v)?,
            "kernel.sigma" => self.kernel.sigma = parse_f64(key, v)?,
            "kernel.segments" => self.kernel.n_segments = parse_usize(key, v)?,
            "kernel.exponent" => {
                self.kernel.exponent = match v {
                    "distance" => KernelExponent::Distance,
                    "squared" => KernelExponent::SquaredDistance,
                    _ => return Err(invalid(key, format!("'{v}' is not one of distance, squared"))),
                }
            }
            "kernel.path" => {
                self.kernel.path = match v {
                    "central" => GeodesicPath::CentralSection,
                    "relaxed" => GeodesicPath::Relaxed,
                    "linear" => GeodesicPath::ParameterLinear,
                    _ => return Err(invalid(key, format!("'{v}' is not one of central, relaxed, linear"))),
                }
            }
            "grid.n_theta" => self.grid.n_theta = parse_usize(key, v)?,
            "grid.n_phi" => self.grid.n_phi = parse_usize(key, v)?,
            "frames.projections" => {
                self.projections = v
                    .split(',')
                    .map(|p| p.trim().parse::<Projection>().map_err(|e| invalid(key, e.to_string())))
                    .collect::<Result<_, _>>()?;
            }
            "frames.height" => self.frame_height = parse_usize(key, v)?,
            "frames.width" => self.frame_width = parse_usize(key, v)?,
            "frames.margin" => self.frame_margin = parse_f64(key, v)?,
            "frames.displacement_fraction" => self.displacement_fraction = parse_f64(key, v)?,
            "frames.displacement_scale" => self.displacement_scale = auto_or(v, |v| parse_f64(key, v))?,
            "frames.baseline" => {
                self.baseline = match v {
                    "none" => BaselineMode::None,
                    "global-min" => BaselineMode::GlobalMin,
                    "first-sample" => BaselineMode::FirstSample,
                    _ => return Err(invalid(key, format!("'{v}' is not one of none, global-min, first-sample"))),
                }
            }
            "flow.window_radius" => self.flow.window_radius = parse_usize(key, v)?,
            "flow.poly_sigma" => self.flow.poly_sigma = parse_f64(key, v)?,
            "flow.levels" => self.flow.levels = parse_usize(key, v)?,
            "flow.pyramid_scale" => self.flow.pyramid_scale = parse_f64(key, v)?,
            "flow.iterations" => self.flow.iterations = parse_usize(key, v)?,
            "flow.post_sigma" => self.flow.post_sigma = parse_f64(key, v)?,
            "flow.stride" => self.flow_stride = parse_usize(key, v)?,
            "flow.whole_sequence" => self.whole_sequence = parse_bool(key, v)?,
            "flow.coverage_threshold" => self.coverage_threshold = parse_f64(key, v)?,
            "segment.enabled" => self.segments.enabled = parse_bool(key, v)?,
            "segment.min_prominence" => self.segments.min_prominence = auto_or(v, |v| parse_f64(key, v))?,
            "segment.min_separation_s" => self.segments.min_separation_s = parse_f64(key, v)?,
            "segment.half_width_s" => self.segments.half_width_s = parse_f64(key, v)?,
            "segment.mean_shift" => {
                self.segments.mean_shift_window =
                    if v == "whole" { None } else { Some(parse_usize(key, v)?) }
            }
            "layout.slack" => self.layout_slack = parse_f64(key, v)?,
            "export.frames" => self.export_frames = parse_bool(key, v)?,
            "export.flow_csv" => self.export_flow_csv = parse_bool(key, v)?,
            "export.quiver" => self.export_quiver = parse_bool(key, v)?,
            other => return Err(invalid(other, "unknown key")),
        }
        Ok(())
    }

    /// Checks every field against its module's rules; the error names the
    /// offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {v}")))
            }
        };
        positive("smoother.r_scale", self.smoother.r_scale)?;
        positive("smoother.q_scale", self.smoother.q_scale)?;
        positive("smoother.s0_scale", self.smoother.s0_scale)?;
        positive("kernel.sigma", self.kernel.sigma)?;
        if self.kernel.n_segments == 0 {
            return Err(invalid("kernel.segments", "must be at least 1"));
        }
        if self.grid.n_theta < 2 {
            return Err(invalid("grid.n_theta", "must be at least 2"));
        }
        if self.grid.n_phi < 2 {
            return Err(invalid("grid.n_phi", "must be at least 2"));
        }
        if self.projections.is_empty() {
            return Err(invalid("frames.projections", "needs at least one projection"));
        }
        if self.frame_height < 8 {
            return Err(invalid("frames.height", "must be at least 8"));
        }
        if self.frame_width < 8 {
            return Err(invalid("frames.width", "must be at least 8"));
        }
        if !(self.frame_margin >= 0.0 && self.frame_margin.is_finite()) {
            return Err(invalid("frames.margin", "must be non-negative"));
        }
        positive("frames.displacement_fraction", self.displacement_fraction)?;
        if let Some(s) = self.displacement_scale {
            positive("frames.displacement_scale", s)?;
        }
        if self.flow.window_radius < 1 {
            return Err(invalid("flow.window_radius", "must be at least 1"));
        }
        positive("flow.poly_sigma", self.flow.poly_sigma)?;
        if self.flow.levels < 1 {
            return Err(invalid("flow.levels", "must be at least 1"));
        }
        if !(self.flow.pyramid_scale > 0.0 && self.flow.pyramid_scale < 1.0) {
            return Err(invalid("flow.pyramid_scale", "must lie in (0, 1)"));
        }
        if self.flow.iterations < 1 {
            return Err(invalid("flow.iterations", "must be at least 1"));
        }
        if !(self.flow.post_sigma >= 0.0 && self.flow.post_sigma.is_finite()) {
            return Err(invalid("flow.post_sigma", "must be non-negative"));
        }
        if self.flow_stride < 1 {
            return Err(invalid("flow.stride", "must be at least 1"));
        }
        if !(self.coverage_threshold >= 0.0 && self.coverage_threshold.is_finite()) {
            return Err(invalid("flow.coverage_threshold", "must be non-negative"));
        }
        if let Some(p) = self.segments.min_prominence {
            positive("segment.min_prominence", p)?;
        }
        positive("segment.min_separation_s", self.segments.min_separation_s)?;
        positive("segment.half_width_s", self.segments.half_width_s)?;
        if self.segments.mean_shift_window == Some(0) {
            return Err(invalid("segment.mean_shift", "window must be at least 1"));
        }
        if !(self.layout_slack >= 0.0 && self.layout_slack.is_finite()) {
            return Err(invalid("layout.slack", "must be non-negative"));
        }
        Ok(())
    }

    /// Serializes every key, so that `parse(to_kv())` round-trips.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |v| v.to_string());
        let exponent = match self.kernel.exponent {
            KernelExponent::Distance => "distance",
            KernelExponent::SquaredDistance => "squared",
        };
        let path = match self.kernel.path {
            GeodesicPath::CentralSection => "central",
            GeodesicPath::Relaxed => "relaxed",
            GeodesicPath::ParameterLinear => "linear",
        };
        let projections: Vec<&str> = self.projections.iter().map(|p| p.short_name()).collect();
        let _ = writeln!(s, "smoother.r_scale={}", self.smoother.r_scale);
        let _ = writeln!(s, "smoother.q_scale={}", self.smoother.q_scale);
        let _ = writeln!(s, "smoother.s0_scale={}", self.smoother.s0_scale);
        let _ = writeln!(s, "kernel.sigma={}", self.kernel.sigma);
        let _ = writeln!(s, "kernel.segments={}", self.kernel.n_segments);
        let _ = writeln!(s, "kernel.exponent={exponent}");
        let _ = writeln!(s, "kernel.path={path}");
        let _ = writeln!(s, "grid.n_theta={}", self.grid.n_theta);
        let _ = writeln!(s, "grid.n_phi={}", self.grid.n_phi);
        let _ = writeln!(s, "frames.projections={}", projections.join(","));
        let _ = writeln!(s, "frames.height={}", self.frame_height);
        let _ = writeln!(s, "frames.width={}", self.frame_width);
        let _ = writeln!(s, "frames.margin={}", self.frame_margin);
        let _ = writeln!(s, "frames.displacement_fraction={}", self.displacement_fraction);
        let _ = writeln!(s, "frames.displacement_scale={}", opt(self.displacement_scale));
        let _ = writeln!(s, "frames.baseline={}", self.baseline.name());
        let _ = writeln!(s, "flow.window_radius={}", self.flow.window_radius);
        let _ = writeln!(s, "flow.poly_sigma={}", self.flow.poly_sigma);
        let _ = writeln!(s, "flow.levels={}", self.flow.levels);
        let _ = writeln!(s, "flow.pyramid_scale={}", self.flow.pyramid_scale);
        let _ = writeln!(s, "flow.iterations={}", self.flow.iterations);
        let _ = writeln!(s, "flow.post_sigma={}", self.flow.post_sigma);
        let _ = writeln!(s, "flow.stride={}", self.flow_stride);
        let _ = writeln!(s, "flow.whole_sequence={}", self.whole_sequence);
        let _ = writeln!(s, "flow.coverage_threshold={}", self.coverage_threshold);
        let _ = writeln!(s, "segment.enabled={}", self.segments.enabled);
        let _ = writeln!(s, "segment.min_prominence={}", opt(self.segments.min_prominence));
        let _ = writeln!(s, "segment.min_separation_s={}", self.segments.min_separation_s);
        let _ = writeln!(s, "segment.half_width_s={}", self.segments.half_width_s);
        let _ = writeln!(
            s,
            "segment.mean_shift={}",
            self.segments.mean_shift_window.map_or("whole".to_string(), |n| n.to_string())
        );
        let _ = writeln!(s, "layout.slack={}", self.layout_slack);
        let _ = writeln!(s, "export.frames={}", self.export_frames);
        let _ = writeln!(s, "export.flow_csv={}", self.export_flow_csv);
        let _ = writeln!(s, "export.quiver={}", self.export_quiver);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.kernel.exponent = KernelExponent::SquaredDistance;
        cfg.projections = vec![Projection::Right];
        cfg.segments.mean_shift_window = Some(40);
        cfg.displacement_scale = Some(0.002);
        assert_eq!(PipelineConfig::parse(&cfg.to_kv()).unwrap(), cfg);
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn errors_name_the_field() {
        for (text, field) in [
            ("kernel.sigma=-1", "kernel.sigma"),
            ("flow.levels=0", "flow.levels"),
            ("flow.pyramid_scale=1.5", "flow.pyramid_scale"),
            ("frames.projections=top,bottom", "frames.projections"),
            ("grid.n_phi=abc", "grid.n_phi"),
            ("no.such.key=1", "no.such.key"),
        ] {
            match PipelineConfig::parse(text) {
                Err(CliError::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
