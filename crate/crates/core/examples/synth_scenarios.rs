//! Generates each kind of synthetic scenario and summarizes the readings.

use tactile_flow::geometry::{EllipsoidModel, TaxelLayout};
use tactile_flow::synth::{generate, Scenario, ScenarioKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (model, layout) = (EllipsoidModel::reference(), TaxelLayout::reference());
    for kind in [ScenarioKind::FlatSlide, ScenarioKind::BumpCrossing, ScenarioKind::RidgeCrossing, ScenarioKind::StaticSlip] {
        let scenario = Scenario { kind, heading_deg: 20.0, ..Scenario::default() };
        let (rec, gt) = generate(&scenario, &layout, &model, 7)?;
        let peak = rec.pressure().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hottest = rec
            .impedances()
            .iter()
            .flat_map(|row| row.iter().enumerate())
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i + 1)
            .unwrap_or(0);
        let events: Vec<String> = gt.events.iter().map(|e| format!("{}@{}", e.kind.name(), e.index)).collect();
        println!(
            "{:<15} {} samples, peak pressure {:.1}, hottest taxel e{hottest}, events {}",
            kind.name(),
            rec.len(),
            peak,
            events.join(" ")
        );
    }
    Ok(())
}
