//! smooth, fit, frames, segments, flow and aggregation, wired together.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::flow::{aggregate_fields, estimate_flow, AggregateFlow, FlowField};
use crate::frames::{calibrate_scale, depth_map, NormBounds, Projection, ProjectionSpec, SurfaceGeometry, TactileFrame};
use crate::geometry::{fit_ellipsoid, EllipsoidFit, EllipsoidModel, SurfaceParam, TaxelLayout, TAXEL_COUNT};
use crate::interpolation::InterpolationWeights;
use crate::segmentation::{mean_shift, find_peaks, make_segments, Peak, Segment, SegmentLabel};
use crate::smoothing::{smooth, TaxelRecording};

use super::config::{BaselineMode, PipelineConfig};
use super::recording::write_recording;
use super::CliError;

/// Everything that depends only on the layout and the configuration, and
/// can be reused across recordings.
pub struct Context {
    pub fit: EllipsoidFit,
    pub taxels: Vec<SurfaceParam>,
    pub weights: InterpolationWeights,
    pub geometry: SurfaceGeometry,
    pub specs: Vec<ProjectionSpec>,
}

impl Context {
    pub fn new(layout: &TaxelLayout, cfg: &PipelineConfig) -> Result<Self, CliError> {
        let fit = fit_ellipsoid(layout)?;
        Self::with_fit(layout, fit, cfg)
    }

    pub fn with_fit(layout: &TaxelLayout, fit: EllipsoidFit, cfg: &PipelineConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let model = fit.model;
        let taxels: Vec<SurfaceParam> =
            layout.positions().iter().map(|p| model.point_to_param(p)).collect::<Result<_, _>>()?;
        let weights = InterpolationWeights::new(&model, &taxels, cfg.grid, &cfg.kernel)?;
        let geometry = SurfaceGeometry::new(&model, cfg.grid);
        let specs = cfg
            .projections
            .iter()
            .map(|&p| ProjectionSpec::fit(p, &model, cfg.frame_height, cfg.frame_width, cfg.frame_margin))
            .collect::<Result<_, _>>()?;
        Ok(Self { fit, taxels, weights, geometry, specs })
    }

    pub fn model(&self) -> &EllipsoidModel {
        &self.fit.model
    }

    pub fn spec(&self, projection: Projection) -> Option<&ProjectionSpec> {
        self.specs.iter().find(|s| s.projection == projection)
    }
}

/// Impedances with the resting level removed.
pub fn remove_baseline(rec: &TaxelRecording, mode: BaselineMode) -> Vec<[f64; TAXEL_COUNT]> {
    let rows = rec.impedances();
    match mode {
        BaselineMode::None => rows.to_vec(),
        BaselineMode::GlobalMin => {
            let lo = rows.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            rows.iter().map(|r| r.map(|v| v - lo)).collect()
        }
        BaselineMode::FirstSample => {
            let first = rows.first().copied().unwrap_or([0.0; TAXEL_COUNT]);
            rows.iter().map(|r| std::array::from_fn(|i| r[i] - first[i])).collect()
        }
    }
}

/// Frames of one camera plane for every sample of a recording.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub spec: ProjectionSpec,
    pub frames: Vec<TactileFrame>,
}

/// Interpolates, displaces and renders every sample for every projection.
/// Returns the sequences and the displacement scale that was used.
pub fn render_sequences(
    ctx: &Context,
    rec: &TaxelRecording,
    cfg: &PipelineConfig,
) -> Result<(Vec<FrameSequence>, f64), CliError> {
    let values = remove_baseline(rec, cfg.baseline);
    let fields = values
        .par_iter()
        .map(|v| ctx.weights.interpolate(v))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = match cfg.displacement_scale {
        Some(s) => s,
        None => {
            let peak = fields.iter().flat_map(|f| f.values.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            calibrate_scale(ctx.model(), peak, cfg.displacement_fraction)
        }
    };
    let timestamps = rec.timestamps();
    let mut sequences = Vec::with_capacity(ctx.specs.len());
    for spec in &ctx.specs {
        let maps: Vec<_> = fields
            .par_iter()
            .map(|field| depth_map(&ctx.geometry.displace(field, scale), spec))
            .collect();
        let bounds = NormBounds::from_depth_maps(&maps)?;
        let frames = maps
            .iter()
            .zip(timestamps)
            .map(|(m, &t)| m.normalize(bounds, Some(t)))
            .collect();
        sequences.push(FrameSequence { spec: *spec, frames });
    }
    Ok((sequences, scale))
}

/// Consecutive pairs of every `stride`-th frame, `(k, k + stride)`, within
/// each segment, or over the whole sequence when `segments` is `None`.
pub fn flow_pairs(n_frames: usize, stride: usize, segments: Option<&[Segment]>) -> Vec<(usize, usize)> {
    let stride = stride.max(1);
    let span = |start: usize, end: usize| {
        (start..=end).step_by(stride).filter(move |k| k + stride <= end).map(move |k| (k, k + stride))
    };
    if n_frames == 0 {
        return Vec::new();
    }
    let mut pairs: Vec<(usize, usize)> = match segments {
        None => span(0, n_frames - 1).collect(),
        Some(segs) => segs.iter().flat_map(|s| span(s.start, s.end.min(n_frames - 1))).collect(),
    };
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

#[derive(Debug, Clone)]
pub struct PairFlow {
    pub projection: Projection,
    pub from: usize,
    pub to: usize,
    pub field: FlowField,
}

pub fn compute_flows(
    seq: &FrameSequence,
    pairs: &[(usize, usize)],
    cfg: &PipelineConfig,
) -> Result<Vec<PairFlow>, CliError> {
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let field = estimate_flow(&seq.frames[a], &seq.frames[b], &cfg.flow, None)?;
            Ok(PairFlow { projection: seq.spec.projection, from: a, to: b, field })
        })
        .collect()
}

/// One line of the aggregate table.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub projection: Projection,
    pub label: SegmentLabel,
    pub start: usize,
    pub end: usize,
    pub anchor: usize,
    pub pairs: usize,
    pub flow: Option<AggregateFlow>,
}

pub fn aggregate_rows(
    projection: Projection,
    segments: &[Segment],
    flows: &[PairFlow],
    threshold: f64,
) -> Result<Vec<AggregateRow>, CliError> {
    segments
        .iter()
        .map(|s| {
            let inside: Vec<&FlowField> = flows
                .iter()
                .filter(|f| f.projection == projection && s.contains(f.from) && s.contains(f.to))
                .map(|f| &f.field)
                .collect();
            let flow = if inside.is_empty() {
                None
            } else {
                match aggregate_fields(inside.iter().copied(), threshold) {
                    Ok(a) => Some(a),
                    Err(crate::flow::FlowError::EmptyMask) => None,
                    Err(e) => return Err(e.into()),
                }
            };
            Ok(AggregateRow {
                projection,
                label: s.label.clone(),
                start: s.start,
                end: s.end,
                anchor: s.anchor,
                pairs: inside.len(),
                flow,
            })
        })
        .collect()
}

pub fn write_aggregate_table<W: Write>(rows: &[AggregateRow], mut out: W) -> Result<(), CliError> {
    writeln!(out, "projection,label,start,end,anchor,pairs,dir_x,dir_y,magnitude,coverage")?;
    for r in rows {
        let (dx, dy, m, c) = r.flow.map_or((0.0, 0.0, 0.0, 0.0), |a| {
            (a.direction[0], a.direction[1], a.magnitude, a.coverage)
        });
        writeln!(
            out,
            "{},{},{},{},{},{},{:.9},{:.9},{:.9},{:.9}",
            r.projection.id(),
            r.label,
            r.start,
            r.end,
            r.anchor,
            r.pairs,
            dx,
            dy,
            m,
            c
        )?;
    }
    Ok(())
}

pub struct PipelineOutput {
    pub smoothed: TaxelRecording,
    pub peaks: Vec<Peak>,
    pub segments: Vec<Segment>,
    pub sequences: Vec<FrameSequence>,
    pub scale: f64,
    pub flows: Vec<PairFlow>,
    pub aggregates: Vec<AggregateRow>,
}

impl PipelineOutput {
    pub fn aggregate(&self, projection: Projection, label: &SegmentLabel) -> impl Iterator<Item = &AggregateRow> {
        let label = label.clone();
        self.aggregates.iter().filter(move |r| r.projection == projection && r.label == label)
    }
}

/// Runs every stage on `rec`.
pub fn run_pipeline(ctx: &Context, rec: &TaxelRecording, cfg: &PipelineConfig) -> Result<PipelineOutput, CliError> {
    cfg.validate()?;
    let smoothed = smooth(rec, &cfg.smoother)?.into_recording();
    let n = smoothed.len();
    let rate = smoothed.sample_rate().unwrap_or(1.0);

    let (peaks, segments) = if cfg.segments.enabled {
        let peak_cfg = cfg.segments.peak_config(rate);
        let shifted = mean_shift(smoothed.pressure(), peak_cfg.mean_shift);
        let peaks = find_peaks(&shifted, &peak_cfg);
        let segments = make_segments(&peaks, &peak_cfg, n);
        (peaks, segments)
    } else {
        (Vec::new(), Vec::new())
    };
    let whole = Segment {
        label: SegmentLabel::Custom("all".into()),
        start: 0,
        end: n.saturating_sub(1),
        anchor: 0,
        truncated: false,
    };
    let use_whole = cfg.whole_sequence || !cfg.segments.enabled;
    let table_segments: Vec<Segment> =
        if use_whole { std::iter::once(whole).chain(segments.iter().cloned()).collect() } else { segments.clone() };
    let pairs = flow_pairs(n, cfg.flow_stride, if use_whole { None } else { Some(&segments) });

    let (sequences, scale) = render_sequences(ctx, &smoothed, cfg)?;
    let mut flows = Vec::new();
    let mut aggregates = Vec::new();
    for seq in &sequences {
        let seq_flows = compute_flows(seq, &pairs, cfg)?;
        aggregates.extend(aggregate_rows(seq.spec.projection, &table_segments, &seq_flows, cfg.coverage_threshold)?);
        flows.extend(seq_flows);
    }
    Ok(PipelineOutput { smoothed, peaks, segments, sequences, scale, flows, aggregates })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// `frame_NNNNN.pgm`, `frame_NNNNN.mask.pgm` and `frame_NNNNN.meta` for
/// every frame.
pub fn write_frames(frames: &[TactileFrame], dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (k, f) in frames.iter().enumerate() {
        f.write_pgm(create(&dir.join(format!("frame_{k:05}.pgm")))?)?;
        f.write_mask_pgm(create(&dir.join(format!("frame_{k:05}.mask.pgm")))?)?;
        fs::write(dir.join(format!("frame_{k:05}.meta")), f.metadata())?;
    }
    Ok(())
}

/// Flow CSV and quiver overlay of each pair, as enabled.
pub fn write_flows(
    flows: &[&PairFlow],
    frames: &[TactileFrame],
    dir: &Path,
    csv: bool,
    quiver: bool,
) -> Result<(), CliError> {
    if !(csv || quiver) || flows.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir)?;
    for f in flows {
        let stem = format!("{:05}_{:05}", f.from, f.to);
        if csv {
            let mut w = create(&dir.join(format!("flow_{stem}.csv")))?;
            f.field.write_csv(&mut w)?;
            w.flush()?;
        }
        if quiver {
            let mut w = create(&dir.join(format!("quiver_{stem}.ppm")))?;
            f.field.write_quiver_ppm(&frames[f.from], 6, 4.0, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn write_fit(fit: &EllipsoidFit, mut out: impl Write) -> Result<(), CliError> {
    let m = &fit.model;
    writeln!(out, "a={:.12}", m.a)?;
    writeln!(out, "b={:.12}", m.b)?;
    writeln!(out, "c={:.12}", m.c)?;
    writeln!(out, "cx={:.12}", m.centroid.x)?;
    writeln!(out, "cy={:.12}", m.centroid.y)?;
    writeln!(out, "cz={:.12}", m.centroid.z)?;
    writeln!(out, "mean_abs_residual={:.12e}", fit.mean_abs_residual)?;
    writeln!(out, "iterations={}", fit.iterations)?;
    Ok(())
}

/// Writes the whole output tree of a pipeline run into `dir`.
pub fn write_pipeline(ctx: &Context, out: &PipelineOutput, cfg: &PipelineConfig, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("smoothed.csv"))?;
    write_recording(&out.smoothed, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("ellipsoid.txt"))?;
    write_fit(&ctx.fit, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("segments.csv"))?;
    crate::segmentation::write_segments_csv(&out.segments, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("aggregate.csv"))?;
    write_aggregate_table(&out.aggregates, &mut w)?;
    w.flush()?;
    fs::write(dir.join("config.txt"), cfg.to_kv())?;
    fs::write(dir.join("displacement_scale.txt"), format!("{:.17e}\n", out.scale))?;
    for seq in &out.sequences {
        let base = dir.join(seq.spec.projection.id());
        if cfg.export_frames {
            write_frames(&seq.frames, &base.join("frames"))?;
        }
        let flows: Vec<&PairFlow> = out.flows.iter().filter(|f| f.projection == seq.spec.projection).collect();
        write_flows(&flows, &seq.frames, &base.join("flow"), cfg.export_flow_csv, cfg.export_quiver)?;
    }
    Ok(())
}
