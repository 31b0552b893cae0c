//! Acceptance suite. Each test prints one `[PASS]` or `[FAIL]` line and then
//! asserts on the same condition.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tactile_flow::cli::config::PipelineConfig;
use tactile_flow::cli::pipeline::{run_pipeline, Context};
use tactile_flow::cli::{cmd_pipeline, cmd_synth};
use tactile_flow::flow::{estimate_flow, warp_residual, FarnebackConfig, FlowField};
use tactile_flow::frames::{Projection, TactileFrame};
use tactile_flow::geometry::{fit_ellipsoid, EllipsoidModel, Point3, SurfaceParam, TaxelLayout, TAXEL_COUNT};
use tactile_flow::interpolation::{GridSpec, InterpolationWeights, KernelConfig, KernelExponent};
use tactile_flow::segmentation::{find_peaks, make_segments, mean_shift, prominence, MeanShift, PeakConfig, SegmentLabel};
use tactile_flow::smoothing::{smooth_rows, SmootherConfig};
use tactile_flow::synth::{angle_between_deg, expected_direction, generate, Scenario, ScenarioKind};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1

/// Maximum a-posteriori estimate of the random walk the smoother assumes:
/// prior `x0 ~ N(z0, s0)`, steps with variance `q`, measurements of
/// `x1..` with variance `r`. The normal equations are tridiagonal and are
/// solved with the Thomas algorithm.
fn batch_map(z: &[f64], cfg: &SmootherConfig) -> Vec<f64> {
    let n = z.len();
    let (iq, ir, is0) = (1.0 / cfg.q_scale, 1.0 / cfg.r_scale, 1.0 / cfg.s0_scale);
    let mut diag = vec![0.0; n];
    let off = vec![-iq; n.saturating_sub(1)];
    let mut rhs = vec![0.0; n];
    diag[0] = is0;
    rhs[0] = is0 * z[0];
    for t in 1..n {
        diag[t - 1] += iq;
        diag[t] += iq + ir;
        rhs[t] += ir * z[t];
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / m;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

#[test]
fn a01_smoother_matches_batch_map() {
    let start = Instant::now();
    let cfg = SmootherConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=20);
        let z: Vec<[f64; 1]> = (0..n).map(|_| [rng.gen_range(-5.0..5.0)]).collect();
        let rts: Vec<f64> = smooth_rows(&z, &cfg).unwrap().into_iter().map(|r| r[0]).collect();
        let flat: Vec<f64> = z.iter().map(|r| r[0]).collect();
        let oracle = batch_map(&flat, &cfg);
        for (a, b) in rts.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && elapsed < 5.0;
    report(1, "smoother vs batch MAP", pass, &format!("max abs error {worst:.2e}, {elapsed:.3} s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn a02_channels_are_decoupled() {
    let cfg = SmootherConfig { r_scale: 0.005, q_scale: 0.00015, ..SmootherConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<[f64; TAXEL_COUNT]> =
        (0..60).map(|_| std::array::from_fn(|_| rng.gen_range(1900.0..2300.0))).collect();
    let joint = smooth_rows(&rows, &cfg).unwrap();
    let mut worst = 0.0f64;
    for ch in 0..TAXEL_COUNT {
        let single: Vec<[f64; 1]> = rows.iter().map(|r| [r[ch]]).collect();
        let alone = smooth_rows(&single, &cfg).unwrap();
        for (j, s) in joint.iter().zip(&alone) {
            worst = worst.max((j[ch] - s[0]).abs());
        }
    }
    let pass = worst <= 1e-12;
    report(2, "channel decoupling", pass, &format!("max abs difference {worst:.2e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Taxels at the surface parameters of the bundled layout, placed on
/// `model` and jittered by isotropic Gaussian noise.
fn layout_on(model: &EllipsoidModel, noise: f64, rng: &mut ChaCha8Rng) -> TaxelLayout {
    let reference = EllipsoidModel::reference();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let positions = TaxelLayout::reference()
        .positions()
        .iter()
        .map(|p| {
            let q = model.param_to_point(reference.point_to_param(p).unwrap());
            if noise > 0.0 {
                q + Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
            } else {
                q
            }
        })
        .collect();
    TaxelLayout::new(positions, 1.0).unwrap()
}

fn relative_axis_error(fit: &EllipsoidModel, truth: &EllipsoidModel) -> f64 {
    [(fit.a, truth.a), (fit.b, truth.b), (fit.c, truth.c)]
        .iter()
        .map(|(f, t)| ((f - t) / t).abs())
        .fold(0.0, f64::max)
}

#[test]
fn a03_fit_recovers_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noiseless = 0.0f64;
    let mut noisy = 0.0f64;
    let mut noisy_all = Vec::new();
    for _ in 0..20 {
        let truth = EllipsoidModel::new(
            12.0 * rng.gen_range(0.9..1.1),
            7.0 * rng.gen_range(0.9..1.1),
            7.0 * rng.gen_range(0.9..1.1),
            Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..2.0)),
        )
        .unwrap();
        let clean = layout_on(&truth, 0.0, &mut rng);
        noiseless = noiseless.max(relative_axis_error(&fit_ellipsoid(&clean).unwrap().model, &truth));
        let jittered = layout_on(&truth, 0.01 * truth.c, &mut rng);
        let err = relative_axis_error(&fit_ellipsoid(&jittered).unwrap().model, &truth);
        noisy = noisy.max(err);
        noisy_all.push(err);
    }
    let pass = noiseless <= 1e-6 && noisy <= 0.05;
    let mean = noisy_all.iter().sum::<f64>() / noisy_all.len() as f64;
    let over = noisy_all.iter().filter(|e| **e > 0.05).count();
    report(
        3,
        "ellipsoid fit recovery",
        pass,
        &format!("noiseless {noiseless:.2e}; noisy worst {noisy:.4}, mean {mean:.4}, {over}/20 seeds above 0.05"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn a04_sphere_geodesics_converge() {
    let r = 7.0;
    let sphere = EllipsoidModel::new(r, r, r, Point3::zeros()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ladder = [5usize, 10, 20, 50, 100];
    let mut worst = vec![0.0f64; ladder.len()];
    for _ in 0..40 {
        let p = SurfaceParam::new(rng.gen_range(0.1..PI - 0.1), rng.gen_range(PI + 0.1..2.0 * PI - 0.1)).unwrap();
        let q = SurfaceParam::new(rng.gen_range(0.1..PI - 0.1), rng.gen_range(PI + 0.1..2.0 * PI - 0.1)).unwrap();
        let (u, v) = (sphere.param_to_point(p) / r, sphere.param_to_point(q) / r);
        let exact = r * u.dot(&v).clamp(-1.0, 1.0).acos();
        if exact < 1e-6 {
            continue;
        }
        for (slot, &n) in worst.iter_mut().zip(&ladder) {
            *slot = slot.max((sphere.geodesic_distance(p, q, n) - exact).abs() / exact);
        }
    }
    let at_50 = worst[3];
    let monotone = worst.windows(2).all(|w| w[1] < w[0]);
    let pass = at_50 <= 0.005 && monotone;
    let ladder_text: Vec<String> = ladder.iter().zip(&worst).map(|(n, e)| format!("n={n}:{e:.1e}")).collect();
    report(4, "sphere geodesic convergence", pass, &format!("{} (monotone: {monotone})", ladder_text.join(" ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn a05_interpolation_stays_in_bounds() {
    let model = EllipsoidModel::reference();
    let layout = TaxelLayout::reference();
    let taxels: Vec<SurfaceParam> = layout.positions().iter().map(|p| model.point_to_param(p).unwrap()).collect();
    let grid = GridSpec::full(32, 64);
    let weights = InterpolationWeights::new(&model, &taxels, grid, &KernelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut inside, mut total) = (0usize, 0usize);
    for _ in 0..100 {
        let values: Vec<f64> = (0..TAXEL_COUNT).map(|_| rng.gen_range(-500.0..3000.0)).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let field = weights.interpolate(&values).unwrap();
        inside += field.values.iter().filter(|v| (lo..=hi).contains(*v)).count();
        total += field.values.len();
    }
    let constant = weights.interpolate(&[1234.5; TAXEL_COUNT]).unwrap();
    let exact = constant.values.iter().all(|&v| v == 1234.5);
    let pass = inside == total && exact;
    report(5, "interpolation bounds", pass, &format!("{inside}/{total} sites in range, constant exact: {exact}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 6, 7

/// Dense field of Gaussian blobs shifted by `shift` pixels. Dense enough
/// that every masked pixel sees structure within the fitting window.
fn blob_texture(h: usize, w: usize, shift: (f64, f64)) -> TactileFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..150)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(3.0..7.0),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let mut intensity = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64 - shift.0, r as f64 - shift.1);
            let v: f64 = blobs
                .iter()
                .map(|&(bx, by, s, a)| a * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            intensity[r * w + c] = v;
        }
    }
    let hi = intensity.iter().cloned().fold(0.0, f64::max);
    intensity.iter_mut().for_each(|v| *v /= hi * 1.2);
    // A fixed silhouette an eighth of the frame away from every border, so
    // texture entering through the border stays outside the flow mask.
    let mut frame = TactileFrame::from_intensity(h, w, intensity);
    let (mh, mw) = (h / 8, w / 8);
    for r in 0..h {
        for c in 0..w {
            frame.mask[r * w + c] = (mh..h - mh).contains(&r) && (mw..w - mw).contains(&c);
        }
    }
    frame
}

fn masked_mean(f: &FlowField) -> (f64, f64) {
    f.masked_mean().unwrap()
}

#[test]
fn a06_flow_recovers_translations() {
    let cfg = FarnebackConfig::default();
    let base = blob_texture(128, 128, (0.0, 0.0));
    let zero = estimate_flow(&base, &base, &cfg, None).unwrap();
    let zero_max = zero.max_magnitude();
    let mut worst = 0.0f64;
    let mut worst_case = (0.0, 0.0, 0.0, 0.0);
    for s in [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0] {
        for (dx, dy) in [(s, 0.0), (0.0, s)] {
            let moved = blob_texture(128, 128, (dx, dy));
            let (mx, my) = masked_mean(&estimate_flow(&base, &moved, &cfg, None).unwrap());
            let err = (mx - dx).abs().max((my - dy).abs());
            if err > worst {
                worst = err;
                worst_case = (dx, dy, mx, my);
            }
        }
    }
    let pass = worst <= 0.25 && zero_max < 1e-6;
    report(
        6,
        "flow translations",
        pass,
        &format!(
            "worst component error {worst:.3} px at shift ({}, {}) estimated ({:.3}, {:.3}), zero-pair max {zero_max:.1e}",
            worst_case.0, worst_case.1, worst_case.2, worst_case.3
        ),
    );
    assert!(pass);
}

#[test]
fn a07_flow_never_increases_residual() {
    let cfg = FarnebackConfig::default();
    let base = blob_texture(96, 96, (0.0, 0.0));
    let mut worse = 0;
    let mut pairs = 0;
    for (dx, dy) in [(1.0, 0.0), (0.0, -2.0), (2.5, 1.5), (-3.0, 3.0), (0.4, -0.7), (0.0, 0.0)] {
        let moved = blob_texture(96, 96, (dx, dy));
        let flow = estimate_flow(&base, &moved, &cfg, None).unwrap();
        let zero = FlowField::zeros(96, 96);
        let with = warp_residual(&base, &moved, &flow).unwrap();
        let without = warp_residual(&base, &moved, &zero).unwrap();
        pairs += 1;
        if with > without {
            worse += 1;
        }
    }
    let pass = worse == 0;
    report(7, "brightness-constancy residual", pass, &format!("{worse}/{pairs} pairs worsened"));
    assert!(pass);
}

// ---------------------------------------------------------------- 8

/// Pipeline settings for the direction check: a squared-distance kernel
/// narrow enough to follow a single contact spot, a displacement scale of
/// one `c`, a wider polynomial fit with a small averaging window, and flow
/// over every fourth frame. Only the top camera sees the contact.
fn direction_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.projections = vec![Projection::Top];
    cfg.kernel.exponent = KernelExponent::SquaredDistance;
    cfg.kernel.sigma = 2.0;
    cfg.displacement_fraction = 1.0;
    cfg.flow.poly_sigma = 3.0;
    cfg.flow.window_radius = 4;
    cfg.flow_stride = 4;
    cfg
}

#[test]
fn a08_end_to_end_direction() {
    let start = Instant::now();
    let cfg = direction_config();
    let layout = TaxelLayout::reference();
    let ctx = Context::new(&layout, &cfg).unwrap();
    let spec = *ctx.spec(Projection::Top).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut errors = Vec::new();
    for i in 0..20u64 {
        let heading: f64 = rng.gen_range(0.0..360.0);
        let scenario = Scenario {
            kind: ScenarioKind::BumpCrossing,
            heading_deg: heading,
            speed: 4.0,
            duration: 1.5,
            noise_std: 2.0,
            ..Scenario::default()
        };
        let (rec, gt) = generate(&scenario, &layout, ctx.model(), 800 + i).unwrap();
        let out = run_pipeline(&ctx, &rec, &cfg).unwrap();
        let err = out
            .peaks
            .iter()
            .max_by(|a, b| a.prominence.total_cmp(&b.prominence))
            .and_then(|best| out.aggregate(Projection::Top, &SegmentLabel::During).find(|r| r.anchor == best.index))
            .and_then(|row| {
                let flow = row.flow?;
                Some(angle_between_deg(flow.direction, expected_direction(&gt, &spec, row.start, row.end)))
            })
            .unwrap_or(180.0);
        errors.push(err);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let hits = errors.iter().filter(|e| **e <= 20.0).count();
    let pass = hits >= 18 && elapsed < 120.0;
    let listed: Vec<String> = errors.iter().map(|e| format!("{e:.0}")).collect();
    report(
        8,
        "end-to-end direction",
        pass,
        &format!("{hits}/20 within 20 deg, errors [{}] deg, {elapsed:.1} s", listed.join(" ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn peak_stats(pressure: &[f64]) -> (f64, usize) {
    let (idx, _) = pressure.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let prom = prominence(pressure, idx);
    let level = pressure[idx] - 0.5 * prom;
    let mut lo = idx;
    while lo > 0 && pressure[lo - 1] > level {
        lo -= 1;
    }
    let mut hi = idx;
    while hi + 1 < pressure.len() && pressure[hi + 1] > level {
        hi += 1;
    }
    (prom, hi - lo + 1)
}

#[test]
fn a09_feature_discrimination() {
    let layout = TaxelLayout::reference();
    let model = fit_ellipsoid(&layout).unwrap().model;
    let run = |height: f64, width: f64| {
        let s = Scenario { feature_height: height, feature_width: width, ..Scenario::default() };
        let (rec, _) = generate(&s, &layout, &model, 9).unwrap();
        peak_stats(rec.pressure())
    };
    let (p1, s1) = run(1.0, 1.5);
    let (p2, _) = run(2.0, 1.5);
    let (_, s_wide) = run(1.0, 3.0);
    let prom_ratio = p2 / p1;
    let span_ratio = s_wide as f64 / s1 as f64;
    let pass = (prom_ratio - 2.0).abs() <= 0.2 && (span_ratio - 2.0).abs() <= 0.3;
    report(
        9,
        "feature discrimination",
        pass,
        &format!("prominence ratio {prom_ratio:.3}, half-max span ratio {span_ratio:.3} ({s1} -> {s_wide} samples)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

fn bump_series(n: usize, bumps: &[(usize, f64, f64)], offset: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            offset
                + bumps
                    .iter()
                    .map(|&(c, w, h)| h * (-((i as f64 - c as f64) / w).powi(2) / 2.0).exp())
                    .sum::<f64>()
        })
        .collect()
}

#[test]
fn a10_segmentation_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();
    for seed in 0..100 {
        let n = rng.gen_range(150..400);
        let center = rng.gen_range(20..n - 20);
        let width = rng.gen_range(3.0..10.0);
        let height = rng.gen_range(5.0..50.0);
        let offset = rng.gen_range(-1e3..1e3);
        let cfg = PeakConfig { min_prominence: Some(1.0), min_separation: 25, half_width: 30, mean_shift: MeanShift::Whole };

        let single = bump_series(n, &[(center, width, height)], 0.0);
        let peaks = find_peaks(&mean_shift(&single, cfg.mean_shift), &cfg);
        if peaks.len() != 1 || peaks[0].index != center {
            failures.push(format!("seed {seed}: single bump at {center} found {:?}", peaks));
            continue;
        }

        let k = rng.gen_range(2..6);
        let bumps: Vec<(usize, f64, f64)> =
            (0..k).map(|_| (rng.gen_range(5..n - 5), rng.gen_range(2.0..8.0), rng.gen_range(2.0..40.0))).collect();
        let series = bump_series(n, &bumps, 0.0);
        let shifted_series: Vec<f64> = series.iter().map(|v| v + offset).collect();
        let a = find_peaks(&mean_shift(&series, cfg.mean_shift), &cfg);
        let b = find_peaks(&mean_shift(&shifted_series, cfg.mean_shift), &cfg);
        let same_index = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.index == y.index);
        let close_prom =
            a.iter().zip(&b).all(|(x, y)| (x.prominence - y.prominence).abs() <= 1e-9 * (1.0 + offset.abs()));
        if !(same_index && close_prom) {
            failures.push(format!("seed {seed}: additive constant changed peaks"));
        }

        let segments = make_segments(&a, &cfg, n);
        let mut covered = vec![false; n];
        for s in &segments {
            for i in s.start..=s.end {
                if covered[i] {
                    failures.push(format!("seed {seed}: overlap at sample {i}"));
                }
                covered[i] = true;
            }
        }
    }
    let pass = failures.is_empty();
    let detail = if pass { "100/100 seeds".to_string() } else { format!("{} failures, first: {}", failures.len(), failures[0]) };
    report(10, "segmentation invariants", pass, &detail);
    assert!(pass);
}

// ---------------------------------------------------------------- 11

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn a11_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let layout = TaxelLayout::reference();
    let scenario = Scenario { duration: 1.5, speed: 4.0, heading_deg: 35.0, noise_std: 2.0, ..Scenario::default() };
    fs::write(root.join("scenario.txt"), scenario.to_kv()).unwrap();
    cmd_synth(&root.join("scenario.txt"), 11, &layout, &root.join("synth")).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.grid = GridSpec::full(32, 64);
    cfg.frame_height = 64;
    cfg.frame_width = 64;
    cfg.export_flow_csv = true;
    let input = root.join("synth").join("recording.csv");
    cmd_pipeline(&input, &cfg, &layout, &root.join("run_a")).unwrap();
    cmd_pipeline(&input, &cfg, &layout, &root.join("run_b")).unwrap();
    let (a, b) = (tree(&root.join("run_a")), tree(&root.join("run_b")));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let pass = !a.is_empty() && a.len() == b.len() && differing.is_empty();
    report(
        11,
        "pipeline determinism",
        pass,
        &format!("{} files compared, {} differ", a.len().max(b.len()), differing.len()),
    );
    assert!(pass);
}
