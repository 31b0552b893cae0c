//! Runs every stage on a synthetic recording and compares the flow
//! direction in each segment with the ground truth.

use tactile_flow::cli::pipeline::{run_pipeline, Context};
use tactile_flow::cli::PipelineConfig;
use tactile_flow::frames::Projection;
use tactile_flow::geometry::TaxelLayout;
use tactile_flow::segmentation::SegmentLabel;
use tactile_flow::synth::{angle_between_deg, expected_direction, generate, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = TaxelLayout::reference();
    let cfg = PipelineConfig { projections: vec![Projection::Top], frame_height: 96, frame_width: 96, ..PipelineConfig::default() };
    let ctx = Context::new(&layout, &cfg)?;
    let scenario = Scenario { heading_deg: 30.0, speed: 3.0, duration: 2.0, noise_std: 1.0, ..Scenario::default() };
    let (rec, gt) = generate(&scenario, &layout, ctx.model(), 11)?;

    let out = run_pipeline(&ctx, &rec, &cfg)?;
    println!("{} peaks, {} segments, {} flow fields", out.peaks.len(), out.segments.len(), out.flows.len());
    let spec = ctx.spec(Projection::Top).expect("top view configured");
    for label in [SegmentLabel::Before, SegmentLabel::During, SegmentLabel::After] {
        for row in out.aggregate(Projection::Top, &label) {
            let truth = expected_direction(&gt, spec, row.start, row.end);
            match row.flow {
                Some(f) => println!(
                    "{label:>7} {:4}..={:4}: flow ({:+.2}, {:+.2}), off by {:.1} deg",
                    row.start,
                    row.end,
                    f.direction[0],
                    f.direction[1],
                    angle_between_deg(f.direction, truth)
                ),
                None => println!("{label:>7} {:4}..={:4}: no flow", row.start, row.end),
            }
        }
    }
    Ok(())
}
