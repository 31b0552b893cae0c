//! Spreads one sample of taxel readings over a surface grid and prints a
//! coarse map of the result.

use tactile_flow::geometry::{EllipsoidModel, TaxelLayout};
use tactile_flow::interpolation::{GridSpec, InterpolationWeights, KernelConfig, KernelExponent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = EllipsoidModel::reference();
    let taxels = TaxelLayout::reference()
        .positions()
        .iter()
        .map(|p| model.point_to_param(p))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = GridSpec::full(12, 24);
    let kernel = KernelConfig { exponent: KernelExponent::SquaredDistance, sigma: 2.0, ..KernelConfig::default() };
    let weights = InterpolationWeights::new(&model, &taxels, grid, &kernel)?;

    let mut values = [0.0; 24];
    values[5] = 100.0;
    values[6] = 60.0;
    let field = weights.interpolate(&values)?;
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '@'];
    for r in 0..grid.n_theta {
        let line: String = (0..grid.n_phi)
            .map(|c| shades[((field.get(r, c) / 100.0) * 8.0).round().clamp(0.0, 8.0) as usize])
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
