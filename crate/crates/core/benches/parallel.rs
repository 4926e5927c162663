use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polarlink::calibration::{median_crossing_time, CalibrationSettings};
use polarlink::channel::CALIBRATED_DAY_RATE;
use polarlink::exec::{map_range, Execution};
use polarlink::scenario::config::{ExperimentConfig, Scenario};
use polarlink::scenario::run_fringe;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn crossing_times(c: &mut Criterion) {
    let settings = CalibrationSettings { trajectories: 512, ..CalibrationSettings::default() };
    let mut group = c.benchmark_group("median_crossing_512");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| median_crossing_time(black_box(CALIBRATED_DAY_RATE), &settings, 7, exec))
        });
    }
    group.finish();
}

fn fringe_seeds(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let mut group = c.benchmark_group("fringe_scan_8_seeds");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| map_range(exec, 0..8, |s| run_fringe(&cfg.resolved(Scenario::Fringe, s)).map(|o| o.chsh.s)))
        });
    }
    group.finish();
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = crossing_times, fringe_seeds
);
criterion_main!(benches);
