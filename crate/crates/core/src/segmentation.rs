//! Event segmentation from the pressure channel.
//!
//! Peaks of the mean-shifted pressure mark contact events. Each peak spawns
//! a `during` window around it plus `before` and `after` windows of the
//! same half-width on either side, and flow is only computed inside them.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("invalid peak configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed segment CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the pressure baseline is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanShift {
    #[default]
    Whole,
    /// Centered running mean over this many samples, truncated at the ends.
    Running(usize),
}

/// Removes the baseline from `series`.
pub fn mean_shift(series: &[f64], mode: MeanShift) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    match mode {
        MeanShift::Whole => {
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            series.iter().map(|v| v - mean).collect()
        }
        MeanShift::Running(n) => {
            let half = n.max(1) / 2;
            let mut prefix = vec![0.0; series.len() + 1];
            for (i, v) in series.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v;
            }
            (0..series.len())
                .map(|i| {
                    let lo = i.saturating_sub(half);
                    let hi = (i + half + 1).min(series.len());
                    series[i] - (prefix[hi] - prefix[lo]) / (hi - lo) as f64
                })
                .collect()
        }
    }
}

/// Lower bound on the automatic prominence threshold.
pub const PROMINENCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakConfig {
    /// `None` selects twice the median absolute deviation of the series.
    pub min_prominence: Option<f64>,
    pub min_separation: usize,
    pub half_width: usize,
    pub mean_shift: MeanShift,
}

impl PeakConfig {
    /// Defaults for a recording sampled at `rate` Hz: 0.25 s separation,
    /// 0.5 s half-width.
    pub fn for_rate(rate: f64) -> Self {
        Self {
            min_prominence: None,
            min_separation: ((0.25 * rate).round() as usize).max(1),
            half_width: ((0.5 * rate).round() as usize).max(1),
            mean_shift: MeanShift::Whole,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        if let Some(p) = self.min_prominence {
            if !(p > 0.0 && p.is_finite()) {
                return Err(SegmentationError::InvalidConfig(format!("min_prominence must be positive, got {p}")));
            }
        }
        if self.min_separation < 1 {
            return Err(SegmentationError::InvalidConfig("min_separation must be at least 1".into()));
        }
        if let MeanShift::Running(0) = self.mean_shift {
            return Err(SegmentationError::InvalidConfig("running mean window must be at least 1".into()));
        }
        Ok(())
    }

    /// Threshold actually applied to `shifted`.
    pub fn prominence_threshold(&self, shifted: &[f64]) -> f64 {
        self.min_prominence.unwrap_or_else(|| (2.0 * median_abs_deviation(shifted)).max(PROMINENCE_FLOOR))
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn median_abs_deviation(series: &[f64]) -> f64 {
    let m = median(&mut series.to_vec());
    let mut dev: Vec<f64> = series.iter().map(|v| (v - m).abs()).collect();
    median(&mut dev)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub prominence: f64,
}

/// Topographic prominence of the sample at `i`: its height above the
/// higher of the two lowest points reached before meeting a strictly
/// higher sample (or the series end) on each side.
pub fn prominence(series: &[f64], i: usize) -> f64 {
    let h = series[i];
    let mut left_min = h;
    for &v in series[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &series[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Strict local maxima of `shifted` whose prominence reaches the
/// threshold, thinned so that no two are closer than `min_separation`
/// (the higher one wins). Sorted by index.
pub fn find_peaks(shifted: &[f64], cfg: &PeakConfig) -> Vec<Peak> {
    if shifted.len() < 3 {
        return Vec::new();
    }
    let threshold = cfg.prominence_threshold(shifted);
    let mut candidates: Vec<Peak> = (1..shifted.len() - 1)
        .filter(|&i| shifted[i - 1] < shifted[i] && shifted[i] > shifted[i + 1])
        .map(|i| Peak { index: i, prominence: prominence(shifted, i) })
        .filter(|p| p.prominence >= threshold)
        .collect();
    // highest first; ties keep the earlier index
    candidates.sort_by(|a, b| shifted[b.index].total_cmp(&shifted[a.index]).then(a.index.cmp(&b.index)));
    let mut kept: Vec<Peak> = Vec::new();
    for p in candidates {
        if kept.iter().all(|k| k.index.abs_diff(p.index) >= cfg.min_separation) {
            kept.push(p);
        }
    }
    kept.sort_by_key(|p| p.index);
    kept
}

/// Peaks of the negated series.
pub fn find_troughs(shifted: &[f64], cfg: &PeakConfig) -> Vec<Peak> {
    let negated: Vec<f64> = shifted.iter().map(|v| -v).collect();
    find_peaks(&negated, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SegmentLabel {
    Before,
    During,
    After,
    Custom(String),
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentLabel::Before => f.write_str("before"),
            SegmentLabel::During => f.write_str("during"),
            SegmentLabel::After => f.write_str("after"),
            SegmentLabel::Custom(tag) => f.write_str(tag),
        }
    }
}

impl SegmentLabel {
    pub fn parse(s: &str) -> Self {
        match s {
            "before" => SegmentLabel::Before,
            "during" => SegmentLabel::During,
            "after" => SegmentLabel::After,
            other => SegmentLabel::Custom(other.to_string()),
        }
    }
}

/// Inclusive index range tied to the event at `anchor`. For `before` and
/// `after` windows the anchor is the event they flank, so it lies outside
/// the range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub label: SegmentLabel,
    pub start: usize,
    pub end: usize,
    pub anchor: usize,
    /// Set when the nominal window was cut by the horizon or by a
    /// neighbouring event.
    pub truncated: bool,
}

impl Segment {
    pub fn sample_count(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..=self.end).contains(&i)
    }
}

/// Clips the signed window `[lo, hi]` to `[min, max]`; `None` when nothing
/// is left.
fn clip(lo: i64, hi: i64, min: i64, max: i64) -> Option<(usize, usize, bool)> {
    let (a, b) = (lo.max(min), hi.min(max));
    (a <= b).then(|| (a as usize, b as usize, a != lo || b != hi))
}

/// Segments for events at `anchors` (sorted), each event claiming the
/// samples up to the midpoint towards its neighbours.
fn segments_for(anchors: &[usize], half_width: usize, horizon: usize, labels: [SegmentLabel; 3]) -> Vec<Segment> {
    if horizon == 0 {
        return Vec::new();
    }
    let w = half_width as i64;
    let mut out = Vec::new();
    for (k, &p) in anchors.iter().enumerate() {
        let p = p as i64;
        let lo_bound = if k == 0 { 0 } else { (anchors[k - 1] as i64 + p) / 2 + 1 };
        let hi_bound = match anchors.get(k + 1) {
            Some(&next) => (p + next as i64) / 2,
            None => horizon as i64 - 1,
        };
        let nominal = [(p - 2 * w - 1, p - w - 1), (p - w, p + w), (p + w + 1, p + 2 * w + 1)];
        for (label, (lo, hi)) in labels.iter().zip(nominal) {
            if let Some((start, end, truncated)) = clip(lo, hi, lo_bound, hi_bound) {
                out.push(Segment { label: label.clone(), start, end, anchor: p as usize, truncated });
            }
        }
    }
    out
}

/// `before` / `during` / `after` windows for each peak, clipped to
/// `horizon` samples. Empty windows are dropped.
pub fn make_segments(peaks: &[Peak], cfg: &PeakConfig, horizon: usize) -> Vec<Segment> {
    let anchors: Vec<usize> = peaks.iter().map(|p| p.index).collect();
    segments_for(&anchors, cfg.half_width, horizon, [SegmentLabel::Before, SegmentLabel::During, SegmentLabel::After])
}

/// A tagged event, typically a peak or a trough of the pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedEvent {
    pub index: usize,
    pub tag: String,
}

/// One segment per event, spanning `half_width` on either side and trimmed
/// at midpoints like [`make_segments`]. Events need not be sorted.
pub fn event_segments(events: &[TaggedEvent], half_width: usize, horizon: usize) -> Vec<Segment> {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| e.index);
    sorted.dedup_by_key(|e| e.index);
    let anchors: Vec<usize> = sorted.iter().map(|e| e.index).collect();
    let w = half_width as i64;
    let mut out = Vec::new();
    for (k, e) in sorted.iter().enumerate() {
        let p = e.index as i64;
        let lo_bound = if k == 0 { 0 } else { (anchors[k - 1] as i64 + p) / 2 + 1 };
        let hi_bound = match anchors.get(k + 1) {
            Some(&next) => (p + next as i64) / 2,
            None => horizon as i64 - 1,
        };
        if let Some((start, end, truncated)) = clip(p - w, p + w, lo_bound, hi_bound) {
            out.push(Segment { label: SegmentLabel::Custom(e.tag.clone()), start, end, anchor: e.index, truncated });
        }
    }
    out
}

/// Full segmentation of a raw pressure series.
pub fn segment_pressure(pressure: &[f64], cfg: &PeakConfig) -> (Vec<Peak>, Vec<Segment>) {
    let shifted = mean_shift(pressure, cfg.mean_shift);
    let peaks = find_peaks(&shifted, cfg);
    let segments = make_segments(&peaks, cfg, pressure.len());
    (peaks, segments)
}

pub fn write_segments_csv<W: Write>(segments: &[Segment], mut out: W) -> Result<(), SegmentationError> {
    writeln!(out, "label,start,end,anchor")?;
    for s in segments {
        writeln!(out, "{},{},{},{}", s.label, s.start, s.end, s.anchor)?;
    }
    Ok(())
}

pub fn read_segments_csv<R: BufRead>(input: R) -> Result<Vec<Segment>, SegmentationError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let err = |reason: &str| SegmentationError::Csv { line: i + 1, reason: reason.to_string() };
        if i == 0 {
            if line.trim() != "label,start,end,anchor" {
                return Err(err("expected header label,start,end,anchor"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err("expected 4 columns"));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(&format!("bad {what}")));
        let (start, end, anchor) = (num(f[1], "start")?, num(f[2], "end")?, num(f[3], "anchor")?);
        if start > end {
            return Err(err("start after end"));
        }
        out.push(Segment { label: SegmentLabel::parse(f[0]), start, end, anchor, truncated: false });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(w: usize) -> PeakConfig {
        PeakConfig { min_prominence: Some(0.5), min_separation: 10, half_width: w, mean_shift: MeanShift::Whole }
    }

    fn bump(n: usize, center: f64, height: f64, sigma: f64) -> Vec<f64> {
        (0..n).map(|i| height * (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
    }

    #[test]
    fn mean_shift_examples() {
        assert_eq!(mean_shift(&[3.0; 5], MeanShift::Whole), vec![0.0; 5]);
        assert_eq!(mean_shift(&[-1.0, 1.0, 0.0], MeanShift::Whole), vec![-1.0, 1.0, 0.0]);
        assert_eq!(mean_shift(&[1.0, 2.0, 3.0, 4.0], MeanShift::Whole), vec![-1.5, -0.5, 0.5, 1.5]);
        // running mean over 3: ends use two samples
        assert_eq!(mean_shift(&[1.0, 2.0, 3.0, 4.0], MeanShift::Running(3)), vec![-0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn monotone_series_has_no_peaks() {
        let s: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(find_peaks(&mean_shift(&s, MeanShift::Whole), &cfg(5)).is_empty());
    }

    #[test]
    fn isolated_bump() {
        let raw: Vec<f64> = bump(400, 200.0, 10.0, 8.0).iter().map(|v| v + 3.0).collect();
        let peaks = find_peaks(&mean_shift(&raw, MeanShift::Whole), &cfg(5));
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].index, 200);
        assert!((peaks[0].prominence - 10.0).abs() < 1e-9);
    }

    #[test]
    fn close_bumps_keep_the_taller() {
        let a = bump(200, 100.0, 5.0, 2.0);
        let b = bump(200, 106.0, 8.0, 2.0);
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        // both are separate maxima above the threshold
        assert!(s[99] < s[100] && s[100] > s[101]);
        assert!(prominence(&s, 100) > 0.5);
        let peaks = find_peaks(&s, &cfg(5));
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].index, 106);
    }

    #[test]
    fn prominence_brute_force() {
        let s = [0.0, 3.0, 1.0, 5.0, 2.0, 4.0, 0.5, 1.0, 0.0];
        // index 1: lowest left 0, lowest right before 5 is 1 -> 3 - 1
        assert_eq!(prominence(&s, 1), 2.0);
        assert_eq!(prominence(&s, 3), 5.0);
        assert_eq!(prominence(&s, 5), 2.0);
        assert_eq!(prominence(&s, 7), 0.5);
    }

    #[test]
    fn segment_arithmetic() {
        let segs = make_segments(&[Peak { index: 100, prominence: 1.0 }], &cfg(20), 300);
        let spans: Vec<(String, usize, usize)> = segs.iter().map(|s| (s.label.to_string(), s.start, s.end)).collect();
        assert_eq!(
            spans,
            vec![("before".into(), 59, 79), ("during".into(), 80, 120), ("after".into(), 121, 141)]
        );
        assert!(segs.iter().all(|s| !s.truncated && s.anchor == 100));
    }

    #[test]
    fn early_peak_is_truncated() {
        let segs = make_segments(&[Peak { index: 5, prominence: 1.0 }], &cfg(20), 300);
        assert!(segs.iter().all(|s| s.label != SegmentLabel::Before));
        let during = segs.iter().find(|s| s.label == SegmentLabel::During).unwrap();
        assert_eq!((during.start, during.end), (0, 25));
        assert!(during.truncated);
    }

    #[test]
    fn neighbouring_peaks_split_at_midpoint() {
        let peaks = [Peak { index: 100, prominence: 1.0 }, Peak { index: 130, prominence: 1.0 }];
        let segs = make_segments(&peaks, &cfg(20), 300);
        for pair in segs.windows(2) {
            assert!(pair[0].end < pair[1].start, "{pair:?}");
        }
        let during: Vec<_> = segs.iter().filter(|s| s.label == SegmentLabel::During).collect();
        assert_eq!((during[0].start, during[0].end), (80, 115));
        assert_eq!((during[1].start, during[1].end), (116, 150));
    }

    #[test]
    fn troughs_with_custom_tags() {
        let s: Vec<f64> = bump(100, 50.0, -4.0, 3.0);
        let troughs = find_troughs(&s, &cfg(5));
        assert_eq!(troughs.len(), 1);
        let segs = event_segments(&[TaggedEvent { index: troughs[0].index, tag: "slip".into() }], 5, 100);
        assert_eq!(segs[0].label, SegmentLabel::Custom("slip".into()));
        assert_eq!((segs[0].start, segs[0].end), (45, 55));
    }

    #[test]
    fn csv_round_trip() {
        let segs = make_segments(&[Peak { index: 50, prominence: 1.0 }], &cfg(10), 100);
        let mut buf = Vec::new();
        write_segments_csv(&segs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,start,end,anchor\nbefore,29,39,50\n"));
        let back = read_segments_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].label, SegmentLabel::During);
    }

    #[test]
    fn default_threshold_uses_mad() {
        let c = PeakConfig::for_rate(100.0);
        assert_eq!((c.min_separation, c.half_width), (25, 50));
        assert_eq!(c.prominence_threshold(&[0.0; 10]), PROMINENCE_FLOOR);
        let s = [1.0, 2.0, 3.0, 4.0, 100.0];
        // median 3, deviations 2,1,0,1,97 -> MAD 1
        assert_eq!(c.prominence_threshold(&s), 2.0);
    }
}
