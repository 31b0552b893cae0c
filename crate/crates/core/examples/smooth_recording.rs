//! Smooths a noisy synthetic recording and compares it against the clean
//! one.

use tactile_flow::geometry::{EllipsoidModel, TaxelLayout};
use tactile_flow::smoothing::{smooth, SmootherConfig};
use tactile_flow::synth::{generate, Scenario};

fn rms(a: &[[f64; 24]], b: &[[f64; 24]]) -> f64 {
    let sum: f64 = a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2))).sum();
    (sum / (24 * a.len()) as f64).sqrt()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (model, layout) = (EllipsoidModel::reference(), TaxelLayout::reference());
    let clean_scenario = Scenario::default();
    let noisy_scenario = Scenario { noise_std: 4.0, ..clean_scenario.clone() };
    let (clean, _) = generate(&clean_scenario, &layout, &model, 1)?;
    let (noisy, _) = generate(&noisy_scenario, &layout, &model, 1)?;

    // the default smoother is tuned for unit-scale readings; scale it to counts
    let var = noisy_scenario.noise_std.powi(2);
    let cfg = SmootherConfig { r_scale: var, q_scale: 0.03 * var, s0_scale: var };
    let smoothed = smooth(&noisy, &cfg)?;
    println!("rms error raw      {:.3}", rms(noisy.impedances(), clean.impedances()));
    println!("rms error smoothed {:.3}", rms(smoothed.impedances(), clean.impedances()));
    Ok(())
}
