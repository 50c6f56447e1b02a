//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs with `cargo test --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use occloc_core::imaging::{distance_from_pixels, feasibility, pixel_count, FeasibilityRegime, RangingConstant};
use occloc_core::model::{distance, CameraModel, FixtureShape, Luminaire, Point3, RoomConfig};
use occloc_core::modem::{decode_frame, encode_frame, FRAME_BITS};
use occloc_core::sim::{
    filter_comparison_scenario, run_ber_sweep, run_ensemble, run_experiment, run_filter_comparison,
    run_range_sweep, run_tracking, summarize, write_run, BerSpec, Experiment, Manifest, Scenario, TickFlag,
    MANIFEST_FILE,
};
use occloc_core::solver::{
    estimate_position, trilaterate, trilaterate_collinear, AnchorMeasurement, KnownCoordinate,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for i in 0..10_000 {
        let camera = CameraModel {
            focal_length_mm: rng.random_range(1.0..50.0),
            pixel_edge_mm: rng.random_range(1e-3..2e-2),
            ..CameraModel::default()
        };
        let shape = if i % 2 == 0 {
            FixtureShape::Circular {
                radius_mm: rng.random_range(5.0..500.0),
            }
        } else {
            FixtureShape::Rectangular {
                width_mm: rng.random_range(5.0..1000.0),
                height_mm: rng.random_range(5.0..1000.0),
            }
        };
        let lum = Luminaire::new(i, Point3::new(0.0, 0.0, 0.0), shape, 20.0, 1.0, 1000.0).unwrap();
        let f = camera.focal_length_mm;
        // Log-uniform over [10 f, 1e6 f] in millimetres.
        let d_mm = 10.0 * f * 10f64.powf(rng.random_range(0.0..5.0));
        let eta = pixel_count(&camera, &lum, d_mm / 10.0).unwrap();
        let back = distance_from_pixels(RangingConstant::new(&camera, &lum), eta).unwrap();
        worst = worst.max((back - d_mm).abs() / d_mm);
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && within(t, 1.0),
        format!("max relative error {worst:.2e} over 1e4 draws, {:.3} s", t.as_secs_f64()),
    )
}

fn trilateration_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_pos, mut worst_sphere) = (0.0_f64, 0.0_f64);
    let mut n = 0;
    while n < 10_000 {
        let h = rng.random_range(200.0..600.0);
        let anchors: Vec<Point3> = (0..3)
            .map(|_| Point3::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0), h))
            .collect();
        let (a, b, c) = (anchors[0], anchors[1], anchors[2]);
        let area = ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs() / 2.0;
        if area < 1_000.0 {
            continue;
        }
        let truth = Point3::new(
            rng.random_range(0.0..1000.0),
            rng.random_range(0.0..1000.0),
            h - rng.random_range(20.0..h),
        );
        let ms: Vec<_> = anchors
            .iter()
            .map(|p| AnchorMeasurement::new(*p, distance(p, &truth)))
            .collect();
        let est = trilaterate(&ms).unwrap();
        worst_pos = worst_pos.max(distance(&est.position, &truth));
        assert_eq!(est.candidates.len(), 2);
        for cand in &est.candidates {
            for m in &ms {
                worst_sphere = worst_sphere.max((distance(cand, &m.anchor) - m.distance_cm).abs());
            }
        }
        n += 1;
    }
    let t = start.elapsed();
    outcome(
        worst_pos < 1e-6 && worst_sphere < 1e-6 && within(t, 5.0),
        format!(
            "max position error {worst_pos:.2e} cm, max sphere mismatch {worst_sphere:.2e} cm, {:.3} s",
            t.as_secs_f64()
        ),
    )
}

/// Best (y, depth) on the plane x = 200 for the given ranges, by exhaustive
/// grid search refined around the best cell. Returns the RMS range mismatch.
fn brute_force_line(anchors_y: &[f64], ranges: &[f64]) -> (f64, f64, f64) {
    let cost = |y: f64, z: f64| {
        let s: f64 = anchors_y
            .iter()
            .zip(ranges)
            .map(|(ay, d)| ((y - ay).hypot(z) - d).powi(2))
            .sum();
        (s / ranges.len() as f64).sqrt()
    };
    let (mut by, mut bz, mut step) = (0.0, 0.0, 1.0);
    let mut best = f64::INFINITY;
    let (mut ylo, mut yhi, mut zlo, mut zhi) = (-200.0, 500.0, 0.0, 600.0);
    for _ in 0..6 {
        let mut y = ylo;
        while y <= yhi {
            let mut z = zlo;
            while z <= zhi {
                let c = cost(y, z);
                if c < best {
                    (best, by, bz) = (c, y, z);
                }
                z += step;
            }
            y += step;
        }
        (ylo, yhi, zlo, zhi) = (by - 2.0 * step, by + 2.0 * step, bz - 2.0 * step, bz + 2.0 * step);
        step /= 10.0;
    }
    (by, bz, best)
}

fn worked_example() -> Outcome {
    let h = 400.0;
    let anchor = |y: f64, d: f64| AnchorMeasurement::new(Point3::new(200.0, y, h), d);
    let pair = [anchor(0.0, 320.0), anchor(300.0, 410.37)];
    let est = trilaterate_collinear(&pair, Some(KnownCoordinate::X(200.0))).unwrap();
    let p = est.position;
    let depth = h - p.z;
    let (oy, oz, ores) = brute_force_line(&[0.0, 300.0], &[320.0, 410.37]);
    let pair_ok = (p.x - 200.0).abs() < 1e-9
        && (p.y - 40.0).abs() <= 0.1
        && (depth - 317.5).abs() <= 0.5
        && (p.y - oy).abs() < 1e-3
        && (depth - oz).abs() < 1e-3
        && ores < 1e-3;

    let all = [anchor(0.0, 320.0), anchor(150.0, 317.5), anchor(300.0, 410.37)];
    let full = trilaterate_collinear(&all, Some(KnownCoordinate::X(200.0))).unwrap();
    let (_, _, brute_res) = brute_force_line(&[0.0, 150.0, 300.0], &[320.0, 317.5, 410.37]);
    let implied = (40.0_f64 - 150.0).hypot(317.5);
    let full_ok = full.residual_cm > 1.0 && brute_res > 1.0;
    outcome(
        pair_ok && full_ok,
        format!(
            "pair gives (200, {:.3}, depth {:.3}), oracle (y {:.3}, depth {:.3}); \
             three ranges give (200, {:.2}, depth {:.2}) with RMS residual {:.2} cm \
             (oracle minimum {:.2} cm; the middle range would need {:.1} cm)",
            p.y,
            depth,
            oy,
            oz,
            full.position.y,
            h - full.position.z,
            full.residual_cm,
            brute_res,
            implied
        ),
    )
}

fn ber_sweep() -> Outcome {
    let start = Instant::now();
    let grid = BerSpec::default().grid();
    let pts = run_ber_sweep(&grid, 100_000, 4).unwrap();
    let t = start.elapsed();
    let worst = pts
        .iter()
        .map(|p| {
            let s = p.sigma();
            if s > 0.0 {
                (p.ber_sim - p.ber_theory).abs() / s
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0_f64, f64::max);
    outcome(
        pts.len() == 16 && worst <= 3.0 && within(t, 30.0),
        format!("{} points, worst deviation {worst:.2} sigma, {:.2} s", pts.len(), t.as_secs_f64()),
    )
}

fn range_shape() -> Outcome {
    let scn = Scenario::default();
    let lum = scn.luminaires().unwrap().remove(0);
    let tau = RangingConstant::new(&scn.camera, &lum);
    // Independent evaluation of f sqrt(S) / rho with the default parameters.
    let oracle_tau_mm = 5.0 * 22_700f64.sqrt() / 7.1e-3;
    let (b4, b1) = tau.regime_boundaries_mm();
    let regime_at = |d_mm: f64| feasibility(pixel_count(&scn.camera, &lum, d_mm / 10.0).unwrap());
    let eps = 1e-9;
    let edges_ok = regime_at(b4 * (1.0 - eps)) == FeasibilityRegime::Full
        && regime_at(b4 * (1.0 + eps)) == FeasibilityRegime::Degraded
        && regime_at(b1 * (1.0 - eps)) == FeasibilityRegime::Degraded
        && regime_at(b1 * (1.0 + eps)) == FeasibilityRegime::Impossible;
    let values_ok = (tau.tau_mm - oracle_tau_mm).abs() < 1e-6
        && (b4 - tau.tau_mm / 2.0).abs() < 1e-9
        && (b1 - tau.tau_mm).abs() < 1e-9
        && (b4 / 1000.0 - 53.05).abs() <= 0.1
        && (b1 / 1000.0 - 106.1).abs() <= 0.1;

    let pts = run_range_sweep(&scn.camera, &lum, &scn.range.grid()).unwrap();
    let rank = |r: FeasibilityRegime| r as u8;
    let ordered = pts.windows(2).all(|w| rank(w[0].regime) <= rank(w[1].regime));
    let all_three = [FeasibilityRegime::Full, FeasibilityRegime::Degraded, FeasibilityRegime::Impossible]
        .iter()
        .all(|r| pts.iter().any(|p| p.regime == *r));
    let placed = pts.iter().all(|p| {
        let d_mm = p.d_m * 1000.0;
        let expect = if d_mm <= b4 {
            FeasibilityRegime::Full
        } else if d_mm <= b1 {
            FeasibilityRegime::Degraded
        } else {
            FeasibilityRegime::Impossible
        };
        p.regime == expect
    });
    outcome(
        edges_ok && values_ok && ordered && all_three && placed,
        format!(
            "tau {:.2} m, Full to Degraded at {:.3} m, Degraded to Impossible at {:.3} m, \
             sweep order {}",
            tau.tau_mm / 1000.0,
            b4 / 1000.0,
            b1 / 1000.0,
            if ordered { "monotone" } else { "interleaved" }
        ),
    )
}

fn tracking_accuracy() -> Outcome {
    let start = Instant::now();
    let scn = Scenario::default();
    let runs = run_ensemble(&scn, 100).unwrap();
    let s = summarize(&runs, 10);
    let t = start.elapsed();
    outcome(
        s.filtered_rms_cm <= 10.0 && s.filtered_rms_cm <= s.raw_rms_cm && within(t, 60.0),
        format!(
            "filtered RMS {:.2} cm, raw RMS {:.2} cm over 100 seeds from tick 10, {:.2} s",
            s.filtered_rms_cm,
            s.raw_rms_cm,
            t.as_secs_f64()
        ),
    )
}

fn filter_comparison() -> Outcome {
    let scn = Scenario::default();
    let pts = run_filter_comparison(&scn).unwrap();
    let fc = filter_comparison_scenario(&scn);
    let at = |t: f64| pts.iter().find(|p| (p.t_s - t).abs() < 1e-9).unwrap();
    let (first, ten) = (at(0.0), at(10.0));
    outcome(
        first.err_kf_norm == 1.0
            && first.err_raw_norm == 1.0
            && ten.err_kf_norm <= 0.1
            && ten.err_raw_norm >= 0.4,
        format!(
            "t=0: {:.3}/{:.3}; t=10 s: with filter {:.3}, without {:.3} ({} cm/s straight walk, {} seeds)",
            first.err_kf_norm,
            first.err_raw_norm,
            ten.err_kf_norm,
            ten.err_raw_norm,
            fc.trajectory.speed_cm_s,
            fc.ensemble.members
        ),
    )
}

fn spacing() -> Outcome {
    let scn = Scenario::default();
    assert_eq!(scn.trajectory.speed_cm_s, 10.0);
    assert_eq!(scn.sampling_hz, 1.0);
    let runs = run_ensemble(&scn, 100).unwrap();
    let s = summarize(&runs, 10);
    let cold = runs
        .iter()
        .all(|r| r[0].flag == TickFlag::ColdStart && r[0].filtered_estimate.is_none());
    outcome(
        (9.0..=10.5).contains(&s.mean_filtered_spacing_cm) && cold,
        format!(
            "mean filtered spacing {:.3} cm from tick 10; first tick cold start in every run: {cold}",
            s.mean_filtered_spacing_cm
        ),
    )
}

/// RMS of x, y and z errors under Gaussian range noise, plus a one-sided
/// Welch statistic for "z squared error exceeds x (and y) squared error".
fn dilution(anchors: &[Point3], truth: Point3, room: &RoomConfig, sigma: f64, trials: usize) -> ([f64; 3], f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut sq = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..trials {
        let ms: Vec<_> = anchors
            .iter()
            .map(|a| AnchorMeasurement::new(*a, distance(a, &truth) + noise.sample(&mut rng)))
            .collect();
        let p = estimate_position(&ms, room, Some(&truth)).unwrap().position;
        sq[0].push((p.x - truth.x).powi(2));
        sq[1].push((p.y - truth.y).powi(2));
        sq[2].push((p.z - truth.z).powi(2));
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var / n)
    };
    let [sx, sy, sz] = [stats(&sq[0]), stats(&sq[1]), stats(&sq[2])];
    let welch = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0) / (a.1 + b.1).sqrt();
    ([sx.0.sqrt(), sy.0.sqrt(), sz.0.sqrt()], welch(sz, sx), welch(sz, sy))
}

fn geometric_dilution() -> Outcome {
    // One-sided 99% critical value of the standard normal.
    const Z99: f64 = 2.326;
    let room = RoomConfig::new(600.0, 600.0, 300.0).unwrap();
    let wide = [
        Point3::new(100.0, 100.0, 300.0),
        Point3::new(250.0, 100.0, 300.0),
        Point3::new(100.0, 250.0, 300.0),
    ];
    let (rms, tx, ty) = dilution(&wide, Point3::new(150.0, 150.0, 250.0), &room, 2.0, 1000);
    let grid = [
        Point3::new(450.0, 450.0, 300.0),
        Point3::new(600.0, 450.0, 300.0),
        Point3::new(450.0, 600.0, 300.0),
    ];
    let room2 = RoomConfig::new(1219.0, 1219.0, 300.0).unwrap();
    let (rms2, _, _) = dilution(&grid, Point3::new(500.0, 510.0, 100.0), &room2, 2.0, 1000);
    outcome(
        tx > Z99 && ty > Z99,
        format!(
            "anchors 50 cm overhead: RMS x {:.2}, y {:.2}, z {:.2} cm, Welch z-vs-x {tx:.1}, z-vs-y {ty:.1}; \
             for reference, 200 cm below a 150 cm grid cell: x {:.2}, y {:.2}, z {:.2} cm",
            rms[0], rms[1], rms[2], rms2[0], rms2[1], rms2[2]
        ),
    )
}

fn modem_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut coords: Vec<(u32, u32)> = vec![(0, 0), (65_535, 65_535), (75, 75), (1144, 1144)];
    coords.extend((0..2000).map(|_| (rng.random_range(0..65_536), rng.random_range(0..65_536))));
    let (mut flips, mut silent, mut accepted) = (0usize, 0usize, 0usize);
    for &(x, y) in &coords {
        let frame = encode_frame(x, y).unwrap();
        assert_eq!(decode_frame(&frame).unwrap(), (x as u16, y as u16));
        for i in 0..FRAME_BITS {
            let mut bad = frame.clone();
            bad[i] = !bad[i];
            flips += 1;
            if let Ok(got) = decode_frame(&bad) {
                accepted += 1;
                if got != (x as u16, y as u16) {
                    silent += 1;
                }
            }
        }
    }
    let mut scn = Scenario::default();
    scn.noise.pixel_sigma = 0.0;
    let runs = run_tracking(&scn).unwrap();
    let worst = runs
        .iter()
        .map(|r| r.raw_error_cm.unwrap_or(f64::INFINITY))
        .fold(0.0_f64, f64::max);
    let exact_z = runs
        .iter()
        .all(|r| r.raw_estimate.is_some_and(|p| (p.z - scn.camera_height_cm).abs() < 1e-6));
    outcome(
        silent == 0 && worst < 1e-6 && exact_z,
        format!(
            "{flips} single-bit flips: {silent} silent miscodes, {accepted} accepted; \
             noise-free run max raw error {worst:.2e} cm over {} ticks",
            runs.len()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let mut scn = Scenario::default();
    scn.seed = 2024;
    let mut checked = 0;
    let mut mismatched = Vec::new();
    for exp in [Experiment::Track, Experiment::Ber, Experiment::Range, Experiment::Filtercmp] {
        let out = dir.path().join(exp.as_str());
        let files = run_experiment(exp, &scn, true).unwrap();
        write_run(&out, &Manifest::new(exp, &scn, true, &files), &files).unwrap();
        let text = std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
        let manifest = Manifest::from_json(&text, "manifest").unwrap();
        for f in manifest.replay().unwrap() {
            checked += 1;
            if std::fs::read(out.join(&f.name)).unwrap() != f.contents.as_bytes() {
                mismatched.push(f.name);
            }
        }
    }
    outcome(
        mismatched.is_empty() && checked >= 8,
        format!("{checked} files replayed from written manifests, mismatches: {mismatched:?}"),
    )
}

fn main() {
    // Under `cargo test <filter>` only run when asked for by name.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("photogrammetric round trip", round_trip),
        ("trilateration exactness", trilateration_exactness),
        ("worked collinear example", worked_example),
        ("OOK BER against theory", ber_sweep),
        ("ranging regimes", range_shape),
        ("10 cm tracking accuracy", tracking_accuracy),
        ("filtered vs raw delivery error", filter_comparison),
        ("estimate spacing at 10 cm/s", spacing),
        ("geometric dilution", geometric_dilution),
        ("modem integrity", modem_integrity),
        ("manifest replay determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {:>2}. {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
