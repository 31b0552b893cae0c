use std::f64::consts::PI;

use tactile_flow::geometry::{EllipsoidModel, GeodesicPath, SurfaceParam, TaxelLayout};
use tactile_flow::synth::{
    contact_spots, excess_at, generate, lift_to_surface, EventKind, GroundTruth, Scenario, ScenarioKind,
};

fn area_element(model: &EllipsoidModel, q: SurfaceParam, h: f64) -> f64 {
    let at = |t: f64, p: f64| model.param_to_point(SurfaceParam { theta: t, phi: p });
    let dt = (at(q.theta + h, q.phi) - at(q.theta - h, q.phi)) / (2.0 * h);
    let dp = (at(q.theta, q.phi + h) - at(q.theta, q.phi - h)) / (2.0 * h);
    dt.cross(&dp).norm()
}

#[test]
fn contact_excess_is_concentrated_within_three_widths() {
    let model = EllipsoidModel::reference();
    for (heading, t) in [(0.0, 0.3), (30.0, 1.5), (120.0, 2.7)] {
        let scenario = Scenario { kind: ScenarioKind::FlatSlide, heading_deg: heading, ..Scenario::default() };
        let spots = contact_spots(&scenario, &model, t).unwrap();
        assert_eq!(spots.len(), 1);
        let w = scenario.contact_width;
        let (nt, np) = (160usize, 320usize);
        let (ht, hp) = (PI / nt as f64, PI / np as f64);
        let (mut total, mut near) = (0.0, 0.0);
        for i in 0..nt {
            for j in 0..np {
                let q = SurfaceParam { theta: (i as f64 + 0.5) * ht, phi: PI + (j as f64 + 0.5) * hp };
                let mass = excess_at(&model, q, &spots, w) * area_element(&model, q, 1e-6) * ht * hp;
                total += mass;
                let g = model.polyline_distance(q, spots[0].center, 50, GeodesicPath::CentralSection);
                if g <= 3.0 * w {
                    near += mass;
                }
            }
        }
        let share = near / total;
        assert!(share >= 0.95, "heading {heading}, t {t}: only {:.1}% within 3w", 100.0 * share);
    }
}

#[test]
fn higher_feature_gives_larger_pressure_excursion() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    let mut last = f64::NEG_INFINITY;
    for height in [0.25, 0.5, 1.0, 2.0] {
        let scenario = Scenario { feature_height: height, ..Scenario::default() };
        let (rec, _) = generate(&scenario, &layout, &model, 1).unwrap();
        let peak = rec.pressure().iter().map(|p| p - scenario.pressure_baseline).fold(f64::NEG_INFINITY, f64::max);
        assert!(peak > last, "height {height}: peak {peak} not above {last}");
        last = peak;
    }
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    let scenario = Scenario { noise_std: 3.0, duration: 1.0, ..Scenario::default() };
    let (a, ga) = generate(&scenario, &layout, &model, 42).unwrap();
    let (b, gb) = generate(&scenario, &layout, &model, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    let (c, _) = generate(&scenario, &layout, &model, 43).unwrap();
    assert_ne!(a.impedances(), c.impedances());
}

#[test]
fn contact_moves_along_the_heading() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    for heading in [0.0, 45.0, 90.0, 200.0, 315.0] {
        let scenario = Scenario { heading_deg: heading, kind: ScenarioKind::FlatSlide, ..Scenario::default() };
        let (_, gt) = generate(&scenario, &layout, &model, 0).unwrap();
        let expected = [f64::cos(heading * PI / 180.0), f64::sin(heading * PI / 180.0)];
        for w in gt.contact_world.windows(2) {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let n = dx.hypot(dy);
            assert!((dx / n - expected[0]).abs() < 1e-9 && (dy / n - expected[1]).abs() < 1e-9);
            // lifted onto the upper part of the core
            assert!(w[1].z >= model.centroid.z);
        }
        assert!(gt.motion.iter().all(|m| *m == expected));
    }
}

#[test]
fn crossing_event_sits_on_the_feature() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    let scenario = Scenario { feature_position: 0.3, ..Scenario::default() };
    let (rec, gt) = generate(&scenario, &layout, &model, 0).unwrap();
    let index = gt.event(EventKind::FeatureCrossing).unwrap();
    assert_eq!(index, (0.3 * scenario.duration * scenario.sample_rate).round() as usize);
    let peak = (0..rec.len()).max_by(|&i, &j| rec.pressure()[i].total_cmp(&rec.pressure()[j])).unwrap();
    assert!(peak.abs_diff(index) <= 10, "pressure peak {peak}, event {index}");
}

#[test]
fn static_slip_holds_still_until_onset() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    let scenario = Scenario { kind: ScenarioKind::StaticSlip, ..Scenario::default() };
    let (_, gt) = generate(&scenario, &layout, &model, 0).unwrap();
    let onset = gt.event(EventKind::SlipOnset).unwrap();
    assert_eq!(onset, 100);
    assert!(gt.contact_world[..onset].windows(2).all(|w| w[0] == w[1]));
    assert!(gt.contact_world[onset + 1] != gt.contact_world[onset]);
    assert!(gt.motion[..onset].iter().all(|m| *m == [0.0, 0.0]));
}

#[test]
fn ground_truth_and_scenario_round_trip() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    let scenario = Scenario { heading_deg: 17.5, noise_std: 1.5, kind: ScenarioKind::RidgeCrossing, ..Scenario::default() };
    let (_, gt) = generate(&scenario, &layout, &model, 9).unwrap();
    let mut buf = Vec::new();
    gt.write_csv(&mut buf).unwrap();
    let back = GroundTruth::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), gt.len());
    assert_eq!(back.events, gt.events);
    for (a, b) in back.contact_world.iter().zip(&gt.contact_world) {
        assert!((a - b).norm() < 1e-9);
    }
    assert_eq!(Scenario::parse(&scenario.to_kv()).unwrap(), scenario);
}

#[test]
fn lifting_rejects_points_off_the_upper_part() {
    let model = EllipsoidModel::reference();
    assert!(lift_to_surface(&model, [0.0, 1.0]).is_none());
    assert!(lift_to_surface(&model, [13.0, -1.0]).is_none());
    let p = lift_to_surface(&model, [3.0, -2.0]).unwrap();
    assert!(model.algebraic_residual(&p).abs() < 1e-12);
    let far = Scenario { center: [11.0, -3.5], ..Scenario::default() };
    assert!(generate(&far, &TaxelLayout::reference(), &model, 0).is_err());
}
