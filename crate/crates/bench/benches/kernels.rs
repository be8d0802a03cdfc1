use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use streamap::forecast::{max_weight_assignment, KalmanConfig};
use streamap::geometry::iou_matrix;
use streamap::metrics::{average_precision, evaluate_vsap, run_streaming};
use streamap::{BBox, Forecaster, LatencyModel};
use streamap_bench::workload;

fn geometry(c: &mut Criterion) {
    let boxes: Vec<BBox> = (0..64)
        .map(|i| BBox::new(i as f64 * 7.0, (i % 8) as f64 * 9.0, 40.0, 30.0))
        .collect();
    c.bench_function("iou_matrix_64x64", |b| {
        b.iter(|| iou_matrix(black_box(&boxes), black_box(&boxes)))
    });
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for n in [8usize, 32, 64] {
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| ((i * 31 + j * 17) % 97) as f64 / 97.0)
                    .collect()
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| {
            b.iter(|| max_weight_assignment(black_box(w)))
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let (ds, dets) = workload(4, 60, 8);
    c.bench_function("offline_ap_240_frames", |b| {
        b.iter(|| average_precision(black_box(&ds.clips), black_box(&dets)).unwrap())
    });

    let latency = LatencyModel::constant_ms(50.0);
    let mut group = c.benchmark_group("streaming_ap_240_frames");
    for f in [
        Forecaster::identity(),
        Forecaster::constant_velocity(),
        Forecaster::kalman(KalmanConfig::default()),
    ] {
        group.bench_function(f.kind.name(), |b| {
            b.iter(|| run_streaming(&ds.clips, &dets, &latency, &f, Default::default()).unwrap())
        });
    }
    group.finish();

    c.bench_function("vsap_m0_to_3", |b| {
        b.iter(|| {
            evaluate_vsap(
                &ds.clips,
                &dets,
                &latency,
                &Forecaster::identity(),
                &[0, 1, 2, 3],
                Default::default(),
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, geometry, assignment, metrics);
criterion_main!(benches);
