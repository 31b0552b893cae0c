//! Finds pressure peaks in a synthetic bump crossing and cuts the
//! before/during/after windows around them.

use tactile_flow::geometry::{EllipsoidModel, TaxelLayout};
use tactile_flow::segmentation::{segment_pressure, PeakConfig};
use tactile_flow::synth::{generate, EventKind, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario { noise_std: 1.0, ..Scenario::default() };
    let (rec, gt) = generate(&scenario, &TaxelLayout::reference(), &EllipsoidModel::reference(), 3)?;
    let cfg = PeakConfig::for_rate(scenario.sample_rate);
    let (peaks, segments) = segment_pressure(rec.pressure(), &cfg);
    if let Some(i) = gt.event(EventKind::FeatureCrossing) {
        println!("feature crossed at sample {i}");
    }
    for p in &peaks {
        println!("peak at sample {} (prominence {:.1})", p.index, p.prominence);
    }
    for s in &segments {
        println!("{:>7} {:4}..={:4}{}", s.label.to_string(), s.start, s.end, if s.truncated { " (cut)" } else { "" });
    }
    Ok(())
}
