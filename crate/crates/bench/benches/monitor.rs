use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use gesturewatch::monitor::{run_monitor, Monitor, MonitorConfig, RoutingMode};
use gesturewatch_bench::fixture;

fn monitor(c: &mut Criterion) {
    let f = fixture();
    let traj = &f.corpus[0];
    let mut group = c.benchmark_group("monitor");
    for mode in [RoutingMode::Predicted, RoutingMode::GroundTruth, RoutingMode::Baseline] {
        let config = MonitorConfig {
            mode,
            ..MonitorConfig::default()
        };
        group.throughput(Throughput::Elements(traj.len() as u64));
        group.bench_function(format!("trajectory/{mode:?}"), |b| {
            b.iter(|| run_monitor(&f.library, traj, &config).unwrap())
        });
    }
    group.throughput(Throughput::Elements(1));
    // one step with a full window of history, the steady state of a stream
    let warm = traj.len() / 2;
    group.bench_function("step", |b| {
        b.iter_batched(
            || {
                let mut m = Monitor::new(&f.library, MonitorConfig::default()).unwrap();
                for s in &traj.samples[..warm] {
                    m.push(s, None).unwrap();
                }
                m
            },
            |mut m| m.push(&traj.samples[warm], None).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, monitor);
criterion_main!(benches);
