//! Fits the core ellipsoid to the bundled taxel layout and prints the
//! recovered shape.

use tactile_flow::geometry::{fit_ellipsoid, TaxelLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = TaxelLayout::reference();
    let fit = fit_ellipsoid(&layout)?;
    let m = fit.model;
    println!("semi-axes  a={:.4} b={:.4} c={:.4} mm", m.a, m.b, m.c);
    println!("centroid   ({:.4}, {:.4}, {:.4})", m.centroid.x, m.centroid.y, m.centroid.z);
    println!("mean |residual| {:.3e} after {} iterations", fit.mean_abs_residual, fit.iterations);
    for (i, p) in layout.positions().iter().enumerate().take(4) {
        let q = m.point_to_param(p)?;
        println!("taxel {:2}: theta={:.3} phi={:.3}", i + 1, q.theta, q.phi);
    }
    Ok(())
}
