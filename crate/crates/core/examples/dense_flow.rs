//! Estimates dense flow between two shifted textures and prints the mean
//! motion.

use tactile_flow::flow::{aggregate_fields, estimate_flow, FarnebackConfig};
use tactile_flow::frames::TactileFrame;

fn texture(n: usize, shift: (f64, f64)) -> TactileFrame {
    let data = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - shift.0, (i / n) as f64 - shift.1);
            0.5 + 0.25 * (x / 5.0).sin() * (y / 7.0).cos() + 0.2 * ((x + y) / 11.0).sin()
        })
        .collect();
    TactileFrame::from_intensity(n, n, data)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shift = (2.0, -1.0);
    let field = estimate_flow(&texture(96, (0.0, 0.0)), &texture(96, shift), &FarnebackConfig::default(), None)?;
    let agg = aggregate_fields([&field], 0.1)?;
    println!("true shift  ({:.2}, {:.2}) px", shift.0, shift.1);
    println!(
        "estimated   direction ({:.3}, {:.3}), magnitude {:.3} px, coverage {:.2}",
        agg.direction[0], agg.direction[1], agg.magnitude, agg.coverage
    );
    Ok(())
}
