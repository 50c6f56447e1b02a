use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use occloc_core::imaging::pixel_count;
use occloc_core::model::distance;
use occloc_core::sim::{run_tracking, Scenario};
use occloc_core::solver::{multilaterate, trilaterate, AnchorMeasurement};
use occloc_core::tracker::{track, KalmanConfig};
use occloc_core::Point3;

fn measurements(anchors: &[[f64; 2]], truth: Point3) -> Vec<AnchorMeasurement> {
    anchors
        .iter()
        .map(|a| {
            let p = Point3::new(a[0], a[1], 300.0);
            AnchorMeasurement::new(p, distance(&p, &truth))
        })
        .collect()
}

fn solver(c: &mut Criterion) {
    let truth = Point3::new(510.0, 620.0, 100.0);
    let three = measurements(&[[450.0, 450.0], [600.0, 450.0], [450.0, 600.0]], truth);
    let grid: Vec<[f64; 2]> = (0..4)
        .flat_map(|i| (0..4).map(move |j| [375.0 + 150.0 * i as f64, 375.0 + 150.0 * j as f64]))
        .collect();
    let sixteen = measurements(&grid, truth);
    c.bench_function("trilaterate/3", |b| b.iter(|| trilaterate(black_box(&three)).unwrap()));
    c.bench_function("multilaterate/16", |b| b.iter(|| multilaterate(black_box(&sixteen)).unwrap()));
}

fn ranging(c: &mut Criterion) {
    let s = Scenario::default();
    let lum = s.luminaires().unwrap().remove(0);
    c.bench_function("pixel_count", |b| b.iter(|| pixel_count(&s.camera, &lum, black_box(250.0)).unwrap()));
}

fn tracker(c: &mut Criterion) {
    let cfg = KalmanConfig::default();
    let zs: Vec<[f64; 2]> = (0..50).map(|k| [10.0 * k as f64, 0.5 * k as f64]).collect();
    c.bench_function("kalman/50", |b| b.iter(|| track(black_box(&zs), &cfg, None).unwrap()));
}

fn end_to_end(c: &mut Criterion) {
    let s = Scenario::default();
    c.bench_function("run_tracking/default", |b| b.iter(|| run_tracking(black_box(&s)).unwrap()));
}

criterion_group!(benches, solver, ranging, tracker, end_to_end);
criterion_main!(benches);
