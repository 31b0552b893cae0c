//! Renders the top view of a synthetic contact into PGM images.

use std::fs::{self, File};
use std::io::BufWriter;

use tactile_flow::frames::{NormBounds, Projection, ProjectionSpec, SurfaceGeometry};
use tactile_flow::geometry::EllipsoidModel;
use tactile_flow::interpolation::{GridSpec, SurfaceField};
use tactile_flow::synth::{contact_spots, excess_at, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = EllipsoidModel::reference();
    let grid = GridSpec::full(48, 96);
    let geometry = SurfaceGeometry::new(&model, grid);
    let spec = ProjectionSpec::fit(Projection::Top, &model, 128, 128, 0.05)?;
    let scenario = Scenario::default();
    let bounds = NormBounds::new(-model.c, 1.5 * model.c)?;

    let dir = std::env::temp_dir().join("tactile-flow-frames");
    fs::create_dir_all(&dir)?;
    for (k, t) in [0.5, 1.5, 2.5].into_iter().enumerate() {
        let spots = contact_spots(&scenario, &model, t)?;
        let values = grid.params().map(|q| excess_at(&model, q, &spots, scenario.contact_width)).collect();
        let surface = geometry.displace(&SurfaceField { grid, values }, 0.01);
        let frame = tactile_flow::frames::render_frame(&surface, &spec, bounds);
        let path = dir.join(format!("frame_{k:05}.pgm"));
        frame.write_pgm(BufWriter::new(File::create(&path)?))?;
        println!("t={t:.1}s -> {}", path.display());
    }
    Ok(())
}
