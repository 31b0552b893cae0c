//! Synthetic recordings with known contact motion.
//!
//! A contact patch slides along a straight line in the world x-y plane,
//! lifted onto the upper (z above the centroid) part of the core, so the
//! whole trajectory stays visible from the top camera. Each taxel reads
//! `baseline + sum_k amp_k * exp(-g_k^2 / (2 w^2)) + noise`, where `g_k` is
//! the surface distance from the taxel to contact spot `k`. A feature on
//! the touched object raises the main spot's amplitude while the contact
//! passes over it.
//!
//! Frame axis convention: in the top projection frame columns follow world
//! +x and frame rows follow world +y.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::frames::ProjectionSpec;
use crate::geometry::{
    EllipsoidModel, GeodesicPath, GeometryError, Point3, SurfaceParam, TaxelLayout, TAXEL_COUNT,
};
use crate::smoothing::{SmoothingError, TaxelRecording};

/// Polyline resolution of the contact-distance computation.
const CONTACT_SEGMENTS: usize = 50;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {field}: {reason}")]
    InvalidScenario { field: String, reason: String },
    #[error("scenario file line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("contact trajectory leaves the sensor domain at t = {t:.4} s ({x:.3}, {y:.3})")]
    OutsideDomain { t: f64, x: f64, y: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Recording(#[from] SmoothingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    FlatSlide,
    BumpCrossing,
    RidgeCrossing,
    StaticSlip,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FlatSlide => "flat-slide",
            ScenarioKind::BumpCrossing => "bump-crossing",
            ScenarioKind::RidgeCrossing => "ridge-crossing",
            ScenarioKind::StaticSlip => "static-slip",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [ScenarioKind::FlatSlide, ScenarioKind::BumpCrossing, ScenarioKind::RidgeCrossing, ScenarioKind::StaticSlip]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario kind '{s}'"))
    }
}

/// Generator parameters. Lengths in millimeters, times in seconds,
/// readings in sensor counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub sample_rate: f64,
    pub duration: f64,
    /// World x-y position of the trajectory midpoint.
    pub center: [f64; 2],
    /// Direction of travel in the world x-y plane, degrees from +x towards +y.
    pub heading_deg: f64,
    pub speed: f64,
    pub feature_height: f64,
    /// Full width at half maximum of the feature profile along the path.
    pub feature_width: f64,
    /// Feature location as a fraction of the path length.
    pub feature_position: f64,
    /// Width `w` of the contact spot.
    pub contact_width: f64,
    pub baseline: f64,
    pub amplitude: f64,
    /// Extra spot amplitude per millimeter of feature height.
    pub feature_gain: f64,
    pub pressure_baseline: f64,
    pub pressure_gain: f64,
    pub noise_std: f64,
    /// Static slip: time at which the patch starts to move.
    pub slip_onset: f64,
    /// Static slip: rotation of the secondary spot, degrees per second.
    pub rotation_rate: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::BumpCrossing,
            sample_rate: 100.0,
            duration: 3.0,
            center: [0.0, -3.5],
            heading_deg: 0.0,
            speed: 2.0,
            feature_height: 1.0,
            feature_width: 1.5,
            feature_position: 0.5,
            contact_width: 2.5,
            baseline: 2000.0,
            amplitude: 60.0,
            feature_gain: 120.0,
            pressure_baseline: 1800.0,
            pressure_gain: 0.5,
            noise_std: 0.0,
            slip_onset: 1.0,
            rotation_rate: 30.0,
        }
    }
}

impl Scenario {
    pub fn sample_count(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize + 1
    }

    pub fn path_length(&self) -> f64 {
        let moving = match self.kind {
            ScenarioKind::StaticSlip => (self.duration - self.slip_onset).max(0.0),
            _ => self.duration,
        };
        self.speed * moving
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |field: &str, reason: &str| {
            Err(SynthError::InvalidScenario { field: field.into(), reason: reason.into() })
        };
        let positive = [
            ("sample_rate", self.sample_rate),
            ("duration", self.duration),
            ("feature_height", self.feature_height),
            ("feature_width", self.feature_width),
            ("contact_width", self.contact_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, &format!("must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("speed", self.speed),
            ("amplitude", self.amplitude),
            ("feature_gain", self.feature_gain),
            ("pressure_gain", self.pressure_gain),
            ("noise_std", self.noise_std),
            ("slip_onset", self.slip_onset),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, &format!("must be non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("heading_deg", self.heading_deg),
            ("baseline", self.baseline),
            ("pressure_baseline", self.pressure_baseline),
            ("rotation_rate", self.rotation_rate),
            ("center_x", self.center[0]),
            ("center_y", self.center[1]),
        ] {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if !(0.0..=1.0).contains(&self.feature_position) {
            return bad("feature_position", "must lie in [0, 1]");
        }
        Ok(())
    }

    fn direction(&self) -> [f64; 2] {
        let h = self.heading_deg.to_radians();
        [h.cos(), h.sin()]
    }

    /// Distance travelled along the path at time `t`.
    fn arc_at(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::StaticSlip => self.speed * (t - self.slip_onset).max(0.0),
            _ => self.speed * t,
        }
    }

    /// World x-y position of the main spot at time `t`.
    pub fn contact_xy(&self, t: f64) -> [f64; 2] {
        let d = self.direction();
        let s = self.arc_at(t) - 0.5 * self.path_length();
        [self.center[0] + s * d[0], self.center[1] + s * d[1]]
    }

    /// Feature profile along the path, 1 on the feature axis.
    fn feature_profile(&self, t: f64) -> f64 {
        let u = self.arc_at(t) - self.feature_position * self.path_length();
        let fw = self.feature_width;
        match self.kind {
            ScenarioKind::BumpCrossing => {
                let sigma = fw / (2.0 * (2.0 * 2f64.ln()).sqrt());
                (-u * u / (2.0 * sigma * sigma)).exp()
            }
            ScenarioKind::RidgeCrossing => {
                // smooth box whose half-maximum points sit at +-fw/2
                let edge = fw / 8.0;
                let raw = |u: f64| 0.5 * (((u + fw / 2.0) / edge).tanh() - ((u - fw / 2.0) / edge).tanh());
                raw(u) / raw(0.0)
            }
            _ => 0.0,
        }
    }

    /// Contact spots active at time `t`: world x-y positions and amplitudes.
    pub fn spots_xy(&self, t: f64) -> Vec<([f64; 2], f64)> {
        let main = self.contact_xy(t);
        match self.kind {
            ScenarioKind::StaticSlip => {
                // load grows as the grasped object fills up
                let load = 0.5 + 0.5 * (t / self.duration).min(1.0);
                let angle = (self.rotation_rate * (t - self.slip_onset).max(0.0)).to_radians();
                let r = self.feature_width;
                let second = [main[0] + r * angle.cos(), main[1] + r * angle.sin()];
                vec![(main, self.amplitude * load), (second, 0.5 * self.amplitude * load)]
            }
            _ => {
                let extra = self.feature_gain * self.feature_height * self.feature_profile(t);
                vec![(main, self.amplitude + extra)]
            }
        }
    }

    pub fn to_kv(&self) -> String {
        format!(
            "kind={}\nsample_rate={}\nduration={}\ncenter_x={}\ncenter_y={}\nheading_deg={}\nspeed={}\n\
             feature_height={}\nfeature_width={}\nfeature_position={}\ncontact_width={}\nbaseline={}\n\
             amplitude={}\nfeature_gain={}\npressure_baseline={}\npressure_gain={}\nnoise_std={}\n\
             slip_onset={}\nrotation_rate={}\n",
            self.kind,
            self.sample_rate,
            self.duration,
            self.center[0],
            self.center[1],
            self.heading_deg,
            self.speed,
            self.feature_height,
            self.feature_width,
            self.feature_position,
            self.contact_width,
            self.baseline,
            self.amplitude,
            self.feature_gain,
            self.pressure_baseline,
            self.pressure_gain,
            self.noise_std,
            self.slip_onset,
            self.rotation_rate,
        )
    }

    /// Parses `key=value` lines; `#` starts a comment and missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut s = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |reason: String| SynthError::Syntax { line: i + 1, reason };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "kind" {
                s.kind = value.parse().map_err(syntax)?;
                continue;
            }
            let v: f64 = value.parse().map_err(|_| syntax(format!("{key}: '{value}' is not a number")))?;
            match key {
                "sample_rate" => s.sample_rate = v,
                "duration" => s.duration = v,
                "center_x" => s.center[0] = v,
                "center_y" => s.center[1] = v,
                "heading_deg" => s.heading_deg = v,
                "speed" => s.speed = v,
                "feature_height" => s.feature_height = v,
                "feature_width" => s.feature_width = v,
                "feature_position" => s.feature_position = v,
                "contact_width" => s.contact_width = v,
                "baseline" => s.baseline = v,
                "amplitude" => s.amplitude = v,
                "feature_gain" => s.feature_gain = v,
                "pressure_baseline" => s.pressure_baseline = v,
                "pressure_gain" => s.pressure_gain = v,
                "noise_std" => s.noise_std = v,
                "slip_onset" => s.slip_onset = v,
                "rotation_rate" => s.rotation_rate = v,
                other => return Err(syntax(format!("unknown key '{other}'"))),
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ContactOnset,
    FeatureCrossing,
    SlipOnset,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::ContactOnset => "contact-onset",
            EventKind::FeatureCrossing => "feature-crossing",
            EventKind::SlipOnset => "slip-onset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub index: usize,
}

/// What the generator did, sample by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub timestamps: Vec<f64>,
    /// Main contact spot on the surface.
    pub contact: Vec<SurfaceParam>,
    pub contact_world: Vec<Point3>,
    /// Unit direction of travel in top-frame coordinates (column, row);
    /// zero while the contact is at rest.
    pub motion: Vec<[f64; 2]>,
    pub events: Vec<Event>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn event(&self, kind: EventKind) -> Option<usize> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.index)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SynthError> {
        writeln!(out, "t,theta,phi,x,y,z,dir_x,dir_y,event")?;
        for k in 0..self.len() {
            let p = &self.contact_world[k];
            let events: Vec<&str> =
                self.events.iter().filter(|e| e.index == k).map(|e| e.kind.name()).collect();
            writeln!(
                out,
                "{},{:.12},{:.12},{:.9},{:.9},{:.9},{:.12},{:.12},{}",
                self.timestamps[k],
                self.contact[k].theta,
                self.contact[k].phi,
                p.x,
                p.y,
                p.z,
                self.motion[k][0],
                self.motion[k][1],
                events.join(";")
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, SynthError> {
        let mut gt = GroundTruth {
            timestamps: Vec::new(),
            contact: Vec::new(),
            contact_world: Vec::new(),
            motion: Vec::new(),
            events: Vec::new(),
        };
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let syntax = |reason: &str| SynthError::Syntax { line: i + 1, reason: reason.into() };
            if i == 0 {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(syntax("expected 9 columns"));
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| syntax("bad number"));
            let k = gt.timestamps.len();
            gt.timestamps.push(num(0)?);
            gt.contact.push(SurfaceParam { theta: num(1)?, phi: num(2)? });
            gt.contact_world.push(Point3::new(num(3)?, num(4)?, num(5)?));
            gt.motion.push([num(6)?, num(7)?]);
            for name in f[8].split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let kind = [EventKind::ContactOnset, EventKind::FeatureCrossing, EventKind::SlipOnset]
                    .into_iter()
                    .find(|e| e.name() == name)
                    .ok_or_else(|| syntax("unknown event"))?;
                gt.events.push(Event { kind, index: k });
            }
        }
        Ok(gt)
    }
}

/// Lifts a world x-y position onto the upper part of the core.
pub fn lift_to_surface(model: &EllipsoidModel, xy: [f64; 2]) -> Option<Point3> {
    let c = model.centroid;
    let (u, v) = ((xy[0] - c.x) / model.a, (xy[1] - c.y) / model.b);
    let rest = 1.0 - u * u - v * v;
    if !(rest >= 0.0) || v > 0.0 {
        return None;
    }
    Some(Point3::new(xy[0], xy[1], c.z + model.c * rest.sqrt()))
}

/// A Gaussian contact spot on the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSpot {
    pub center: SurfaceParam,
    pub amplitude: f64,
}

/// Resolved spots of `scenario` at time `t`.
pub fn contact_spots(scenario: &Scenario, model: &EllipsoidModel, t: f64) -> Result<Vec<ContactSpot>, SynthError> {
    scenario
        .spots_xy(t)
        .into_iter()
        .map(|(xy, amplitude)| {
            let p = lift_to_surface(model, xy).ok_or(SynthError::OutsideDomain { t, x: xy[0], y: xy[1] })?;
            Ok(ContactSpot { center: model.point_to_param(&p)?, amplitude })
        })
        .collect()
}

/// Impedance excess at surface point `q` caused by `spots`.
pub fn excess_at(model: &EllipsoidModel, q: SurfaceParam, spots: &[ContactSpot], width: f64) -> f64 {
    spots
        .iter()
        .map(|s| {
            let g = model.polyline_distance(q, s.center, CONTACT_SEGMENTS, GeodesicPath::CentralSection);
            s.amplitude * (-g * g / (2.0 * width * width)).exp()
        })
        .sum()
}

/// Generates a recording of `scenario` on `layout`. Deterministic in `seed`.
pub fn generate(
    scenario: &Scenario,
    layout: &TaxelLayout,
    model: &EllipsoidModel,
    seed: u64,
) -> Result<(TaxelRecording, GroundTruth), SynthError> {
    scenario.validate()?;
    let taxels: Vec<SurfaceParam> = layout
        .positions()
        .iter()
        .map(|p| model.point_to_param(p))
        .collect::<Result<_, _>>()?;
    let n = scenario.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scenario.noise_std).map_err(|e| SynthError::InvalidScenario {
        field: "noise_std".into(),
        reason: e.to_string(),
    })?;

    let mut timestamps = Vec::with_capacity(n);
    let mut impedances = Vec::with_capacity(n);
    let mut pressure = Vec::with_capacity(n);
    let mut gt = GroundTruth {
        timestamps: Vec::with_capacity(n),
        contact: Vec::with_capacity(n),
        contact_world: Vec::with_capacity(n),
        motion: Vec::with_capacity(n),
        events: vec![Event { kind: EventKind::ContactOnset, index: 0 }],
    };
    let dir = scenario.direction();
    for k in 0..n {
        let t = k as f64 / scenario.sample_rate;
        let spots = contact_spots(scenario, model, t)?;
        let mut row = [0.0; TAXEL_COUNT];
        let mut total_excess = 0.0;
        for (value, &q) in row.iter_mut().zip(&taxels) {
            let excess = excess_at(model, q, &spots, scenario.contact_width);
            total_excess += excess;
            *value = scenario.baseline + excess;
        }
        for value in row.iter_mut() {
            *value += noise.sample(&mut rng);
        }
        let p = scenario.pressure_baseline + scenario.pressure_gain * total_excess + noise.sample(&mut rng);

        timestamps.push(t);
        impedances.push(row);
        pressure.push(p);
        gt.timestamps.push(t);
        gt.contact.push(spots[0].center);
        let xy = scenario.contact_xy(t);
        gt.contact_world.push(lift_to_surface(model, xy).expect("checked by contact_spots"));
        let moving = scenario.speed > 0.0
            && (scenario.kind != ScenarioKind::StaticSlip || t >= scenario.slip_onset);
        gt.motion.push(if moving { dir } else { [0.0, 0.0] });
    }
    match scenario.kind {
        ScenarioKind::BumpCrossing | ScenarioKind::RidgeCrossing if scenario.speed > 0.0 => {
            let t_cross = scenario.feature_position * scenario.duration;
            let index = ((t_cross * scenario.sample_rate).round() as usize).min(n - 1);
            gt.events.push(Event { kind: EventKind::FeatureCrossing, index });
        }
        ScenarioKind::StaticSlip => {
            let index = ((scenario.slip_onset * scenario.sample_rate).round() as usize).min(n - 1);
            gt.events.push(Event { kind: EventKind::SlipOnset, index });
        }
        _ => {}
    }
    let recording = TaxelRecording::new(timestamps, impedances, pressure)?;
    Ok((recording, gt))
}

/// Unit pixel-space direction (column, row) of the contact motion between
/// consecutive samples as seen by `spec`; zero for intervals without
/// motion.
pub fn replay_expected_flow(gt: &GroundTruth, spec: &ProjectionSpec) -> Vec<[f64; 2]> {
    let px: Vec<(f64, f64)> = gt
        .contact_world
        .iter()
        .map(|p| {
            let (u, v, _) = spec.projection.coords(p);
            spec.to_pixel(u, v)
        })
        .collect();
    px.windows(2)
        .map(|w| unit(w[1].0 - w[0].0, w[1].1 - w[0].1))
        .collect()
}

/// Net pixel-space direction of the contact over samples `start..=end`.
pub fn expected_direction(gt: &GroundTruth, spec: &ProjectionSpec, start: usize, end: usize) -> [f64; 2] {
    let end = end.min(gt.len().saturating_sub(1));
    if start >= end {
        return [0.0, 0.0];
    }
    let proj = |p: &Point3| {
        let (u, v, _) = spec.projection.coords(p);
        spec.to_pixel(u, v)
    };
    let (a, b) = (proj(&gt.contact_world[start]), proj(&gt.contact_world[end]));
    unit(b.0 - a.0, b.1 - a.1)
}

fn unit(x: f64, y: f64) -> [f64; 2] {
    let n = x.hypot(y);
    if n > 1e-12 {
        [x / n, y / n]
    } else {
        [0.0, 0.0]
    }
}

/// Angle between two 2D directions in degrees.
pub fn angle_between_deg(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1];
    let cross = a[0] * b[1] - a[1] * b[0];
    cross.atan2(dot).abs() * 180.0 / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Projection;

    fn setup() -> (TaxelLayout, EllipsoidModel) {
        (TaxelLayout::reference(), EllipsoidModel::reference())
    }

    #[test]
    fn static_contact_gives_constant_recording() {
        let (layout, model) = setup();
        let s = Scenario { kind: ScenarioKind::FlatSlide, speed: 0.0, duration: 0.2, ..Default::default() };
        let (rec, gt) = generate(&s, &layout, &model, 1).unwrap();
        let first = rec.impedances()[0];
        assert!(rec.impedances().iter().all(|r| *r == first));
        assert!(rec.pressure().iter().all(|p| *p == rec.pressure()[0]));
        assert!(gt.motion.iter().all(|m| *m == [0.0, 0.0]));
    }

    #[test]
    fn same_seed_same_output() {
        let (layout, model) = setup();
        let s = Scenario { noise_std: 3.0, duration: 0.5, ..Default::default() };
        let a = generate(&s, &layout, &model, 9).unwrap();
        let b = generate(&s, &layout, &model, 9).unwrap();
        assert_eq!(a, b);
        let c = generate(&s, &layout, &model, 10).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn leaving_the_domain_is_an_error() {
        let (layout, model) = setup();
        let s = Scenario { heading_deg: 90.0, speed: 5.0, ..Default::default() };
        assert!(matches!(generate(&s, &layout, &model, 0), Err(SynthError::OutsideDomain { .. })));
    }

    #[test]
    fn scenario_text_round_trip() {
        let s = Scenario { kind: ScenarioKind::RidgeCrossing, heading_deg: 33.5, noise_std: 1.25, ..Default::default() };
        assert_eq!(Scenario::parse(&s.to_kv()).unwrap(), s);
        assert!(matches!(Scenario::parse("speed=fast"), Err(SynthError::Syntax { line: 1, .. })));
        assert!(matches!(Scenario::parse("\nbogus=1"), Err(SynthError::Syntax { line: 2, .. })));
        assert!(matches!(Scenario::parse("duration=0"), Err(SynthError::InvalidScenario { .. })));
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let (layout, model) = setup();
        let s = Scenario { duration: 0.3, ..Default::default() };
        let (_, gt) = generate(&s, &layout, &model, 0).unwrap();
        let mut buf = Vec::new();
        gt.write_csv(&mut buf).unwrap();
        let back = GroundTruth::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), gt.len());
        assert_eq!(back.events, gt.events);
        assert!((back.contact_world[5] - gt.contact_world[5]).norm() < 1e-8);
    }

    #[test]
    fn top_view_axis_mapping() {
        let (layout, model) = setup();
        let spec = ProjectionSpec::fit(Projection::Top, &model, 64, 64, 0.05).unwrap();
        let s = Scenario { kind: ScenarioKind::FlatSlide, heading_deg: 90.0, duration: 0.5, ..Default::default() };
        let (_, gt) = generate(&s, &layout, &model, 0).unwrap();
        for d in replay_expected_flow(&gt, &spec) {
            assert!(d[0].abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn diagonal_path_direction() {
        let (layout, model) = setup();
        let spec = ProjectionSpec::fit(Projection::Top, &model, 96, 96, 0.05).unwrap();
        let s = Scenario { kind: ScenarioKind::FlatSlide, heading_deg: 45.0, duration: 0.5, ..Default::default() };
        let (_, gt) = generate(&s, &layout, &model, 0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for d in replay_expected_flow(&gt, &spec) {
            assert!((d[0] - h).abs() < 1e-9 && (d[1] - h).abs() < 1e-9);
        }
    }

    #[test]
    fn static_slip_events() {
        let (layout, model) = setup();
        let s = Scenario { kind: ScenarioKind::StaticSlip, speed: 0.5, duration: 2.0, ..Default::default() };
        let (_, gt) = generate(&s, &layout, &model, 0).unwrap();
        assert_eq!(gt.event(EventKind::SlipOnset), Some(100));
        assert_eq!(gt.motion[50], [0.0, 0.0]);
        assert_ne!(gt.motion[150], [0.0, 0.0]);
    }

    #[test]
    fn angles() {
        assert!((angle_between_deg([1.0, 0.0], [0.0, 1.0]) - 90.0).abs() < 1e-12);
        assert!((angle_between_deg([1.0, 0.0], [-1.0, 0.0]) - 180.0).abs() < 1e-12);
        assert!(angle_between_deg([0.6, 0.8], [0.6, 0.8]) < 1e-12);
    }
}
