//! Command-line front end: file formats, configuration and the
//! subcommands.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.

pub mod config;
pub mod pipeline;
pub mod recording;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::flow::{aggregate_fields, estimate_flow, FlowError};
use crate::frames::{FrameError, Projection, TactileFrame};
use crate::geometry::{fit_ellipsoid, EllipsoidFit, GeometryError, TaxelLayout};
use crate::interpolation::InterpolationError;
use crate::segmentation::{segment_pressure, write_segments_csv, SegmentationError};
use crate::smoothing::{smooth, SmoothingError, TaxelRecording};
use crate::synth::{generate, Scenario, SynthError};

pub use config::PipelineConfig;
use pipeline::{write_fit, write_flows, write_frames, Context, PairFlow};
use recording::{read_recording, write_recording};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config field {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DegenerateFit { .. } | GeometryError::FitFailed(..) => CliError::Numerical(e.to_string()),
            GeometryError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SmoothingError> for CliError {
    fn from(e: SmoothingError) -> Self {
        match e {
            SmoothingError::NotPositiveDefinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<InterpolationError> for CliError {
    fn from(e: InterpolationError) -> Self {
        match e {
            InterpolationError::WeightUnderflow { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::DegenerateBounds { .. } | FrameError::EmptySequence => CliError::Numerical(e.to_string()),
            FrameError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SegmentationError> for CliError {
    fn from(e: SegmentationError) -> Self {
        match e {
            SegmentationError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(io) => CliError::Io(io),
            SynthError::Geometry(g) => g.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path).map(BufReader::new).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

pub fn load_recording(path: &Path) -> Result<TaxelRecording, CliError> {
    read_recording(open(path)?)
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => PipelineConfig::parse(&read_text(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn load_layout(path: Option<&Path>, slack: f64) -> Result<TaxelLayout, CliError> {
    match path {
        Some(p) => Ok(TaxelLayout::parse(&read_text(p)?, slack)?),
        None => Ok(TaxelLayout::reference()),
    }
}

/// Writes `recording.csv`, `ground_truth.csv` and `scenario.txt` into `out`.
pub fn cmd_synth(scenario: &Path, seed: u64, layout: &TaxelLayout, out: &Path) -> Result<(), CliError> {
    let scenario = Scenario::parse(&read_text(scenario)?)?;
    let fit = fit_ellipsoid(layout)?;
    let (rec, gt) = generate(&scenario, layout, &fit.model, seed)?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("recording.csv"))?;
    write_recording(&rec, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("ground_truth.csv"))?;
    gt.write_csv(&mut w)?;
    w.flush()?;
    fs::write(out.join("scenario.txt"), format!("{}# seed={seed}\n", scenario.to_kv()))?;
    Ok(())
}

pub fn cmd_smooth(input: &Path, cfg: &PipelineConfig, out: &Path) -> Result<TaxelRecording, CliError> {
    let rec = load_recording(input)?;
    let smoothed = smooth(&rec, &cfg.smoother)?.into_recording();
    let mut w = create(out)?;
    write_recording(&smoothed, &mut w)?;
    w.flush()?;
    Ok(smoothed)
}

pub fn cmd_fit(layout: &TaxelLayout, out: &Path) -> Result<EllipsoidFit, CliError> {
    let fit = fit_ellipsoid(layout)?;
    let mut w = create(out)?;
    write_fit(&fit, &mut w)?;
    w.flush()?;
    Ok(fit)
}

/// Renders every sample of the recording as it is (no smoothing) into
/// `out/<projection>/`.
pub fn cmd_frames(input: &Path, cfg: &PipelineConfig, layout: &TaxelLayout, out: &Path) -> Result<usize, CliError> {
    let rec = load_recording(input)?;
    let ctx = Context::new(layout, cfg)?;
    let (sequences, _) = pipeline::render_sequences(&ctx, &rec, cfg)?;
    for seq in &sequences {
        write_frames(&seq.frames, &out.join(seq.spec.projection.id()))?;
    }
    Ok(rec.len())
}

/// Reads `frame_NNNNN.pgm` files (with optional `.mask.pgm` and `.meta`
/// sidecars) from `dir`, in name order.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<TactileFrame>, CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| CliError::File { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("frame_") && name.ends_with(".pgm") && !name.ends_with(".mask.pgm")
        })
        .collect();
    names.sort();
    names
        .iter()
        .map(|p| {
            let mask_path = p.with_extension("mask.pgm");
            let meta_path = p.with_extension("meta");
            let meta = if meta_path.exists() {
                read_text(&meta_path)?
            } else {
                "projection=top\nnorm_lo=0\nnorm_hi=1\n".to_string()
            };
            let mask = if mask_path.exists() { Some(open(&mask_path)?) } else { None };
            TactileFrame::from_files(open(p)?, mask, &meta).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Flow between consecutive frames (at the configured stride) of every
/// frame directory under `frames`. Writes flow CSVs, quiver overlays and
/// `aggregate.csv` with one row per pair plus an overall row.
pub fn cmd_flow(frames: &Path, cfg: &PipelineConfig, out: &Path) -> Result<usize, CliError> {
    let mut dirs = vec![(frames.to_path_buf(), out.to_path_buf())];
    if read_frame_dir(frames)?.is_empty() {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(frames)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        dirs = subdirs
            .into_iter()
            .map(|d| {
                let name = d.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                (d, out.join(name))
            })
            .collect();
    }
    let mut total = 0;
    let mut seen_frames = 0;
    for (dir, dest) in dirs {
        let frames = read_frame_dir(&dir)?;
        seen_frames = seen_frames.max(frames.len());
        if frames.len() < 2 {
            continue;
        }
        let pairs = pipeline::flow_pairs(frames.len(), cfg.flow_stride, None);
        let flows: Vec<PairFlow> = pairs
            .iter()
            .map(|&(a, b)| {
                Ok(PairFlow {
                    projection: frames[a].projection,
                    from: a,
                    to: b,
                    field: estimate_flow(&frames[a], &frames[b], &cfg.flow, None)?,
                })
            })
            .collect::<Result<_, CliError>>()?;
        let refs: Vec<&PairFlow> = flows.iter().collect();
        write_flows(&refs, &frames, &dest, true, true)?;
        let mut w = create(&dest.join("aggregate.csv"))?;
        writeln!(w, "from,to,dir_x,dir_y,magnitude,coverage")?;
        let mut row = |label: String, agg: Option<crate::flow::AggregateFlow>| -> Result<(), CliError> {
            let a = agg.map_or([0.0; 4], |a| [a.direction[0], a.direction[1], a.magnitude, a.coverage]);
            writeln!(w, "{label},{:.9},{:.9},{:.9},{:.9}", a[0], a[1], a[2], a[3])?;
            Ok(())
        };
        for f in &flows {
            row(format!("{},{}", f.from, f.to), aggregate_fields([&f.field], cfg.coverage_threshold).ok())?;
        }
        row("all,all".into(), aggregate_fields(flows.iter().map(|f| &f.field), cfg.coverage_threshold).ok())?;
        w.flush()?;
        total += flows.len();
    }
    if seen_frames < 2 {
        return Err(CliError::Data(format!("{}: need ≥ 2 frames, found {seen_frames}", frames.display())));
    }
    Ok(total)
}

pub fn cmd_segment(input: &Path, cfg: &PipelineConfig, out: &Path) -> Result<usize, CliError> {
    let rec = load_recording(input)?;
    let rate = rec.sample_rate().unwrap_or(1.0);
    let peak_cfg = cfg.segments.peak_config(rate);
    peak_cfg.validate()?;
    let (_, segments) = segment_pressure(rec.pressure(), &peak_cfg);
    let mut w = create(out)?;
    write_segments_csv(&segments, &mut w)?;
    w.flush()?;
    Ok(segments.len())
}

pub fn cmd_pipeline(
    input: &Path,
    cfg: &PipelineConfig,
    layout: &TaxelLayout,
    out: &Path,
) -> Result<pipeline::PipelineOutput, CliError> {
    let rec = load_recording(input)?;
    let ctx = Context::new(layout, cfg)?;
    let result = pipeline::run_pipeline(&ctx, &rec, cfg)?;
    pipeline::write_pipeline(&ctx, &result, cfg, out)?;
    Ok(result)
}

#[derive(Debug, Parser)]
#[command(name = "tactile-flow", version, about = "Tactile flow from taxel recordings")]
pub struct Args {
    /// key=value pipeline configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Restrict rendering to one camera plane
    #[arg(long, global = true)]
    pub projection: Option<Projection>,
    /// Taxel layout file (default: bundled reference layout)
    #[arg(long, global = true)]
    pub layout: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording and its ground truth
    Synth { scenario: PathBuf },
    /// Kalman/RTS-smooth a recording
    Smooth { input: PathBuf },
    /// Fit the core ellipsoid to the taxel layout
    Fit,
    /// Render tactile frames for every sample
    Frames { input: PathBuf },
    /// Dense flow between consecutive frames
    Flow { frames: PathBuf },
    /// Pressure-peak segments
    Segment { input: PathBuf },
    /// smooth, fit, frames, segments and flow in one go
    Pipeline { input: PathBuf },
}

fn execute(args: Args) -> Result<String, CliError> {
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(p) = args.projection {
        cfg.projections = vec![p];
    }
    let out = args.out.ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let layout = || load_layout(args.layout.as_deref(), cfg.layout_slack);
    Ok(match args.command {
        Command::Synth { scenario } => {
            cmd_synth(&scenario, args.seed, &layout()?, &out)?;
            format!("wrote {}", out.display())
        }
        Command::Smooth { input } => {
            let rec = cmd_smooth(&input, &cfg, &out)?;
            format!("smoothed {} samples into {}", rec.len(), out.display())
        }
        Command::Fit => {
            let fit = cmd_fit(&layout()?, &out)?;
            let m = fit.model;
            format!(
                "a={:.6} b={:.6} c={:.6} centroid=({:.6}, {:.6}, {:.6}) mean_abs_residual={:.3e}",
                m.a, m.b, m.c, m.centroid.x, m.centroid.y, m.centroid.z, fit.mean_abs_residual
            )
        }
        Command::Frames { input } => {
            let n = cmd_frames(&input, &cfg, &layout()?, &out)?;
            format!("rendered {n} samples into {}", out.display())
        }
        Command::Flow { frames } => {
            let n = cmd_flow(&frames, &cfg, &out)?;
            format!("computed {n} flow fields into {}", out.display())
        }
        Command::Segment { input } => {
            let n = cmd_segment(&input, &cfg, &out)?;
            format!("wrote {n} segments to {}", out.display())
        }
        Command::Pipeline { input } => {
            let result = cmd_pipeline(&input, &cfg, &layout()?, &out)?;
            format!(
                "{} peaks, {} segments, {} flow fields; results in {}",
                result.peaks.len(),
                result.segments.len(),
                result.flows.len(),
                out.display()
            )
        }
    })
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(args) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
