use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fleetslam_core::filter::{rbpf_init, rbpf_update, FilterConfig};
use fleetslam_core::graph::{scan_match, MatcherConfig};
use fleetslam_core::merge::{extract_features, FeatureConfig};
use fleetslam_core::par::set_parallel;
use fleetslam_core::world::{simulate_scan, Environment, LidarConfig, NoiseModel, Segment, SimRng};
use fleetslam_core::{OccupancyGrid, Pose2};
use rand::SeedableRng;
use std::hint::black_box;

fn room() -> Environment {
    Environment::new(vec![
        Segment::new(0.0, 0.0, 6.0, 0.0),
        Segment::new(6.0, 0.0, 6.0, 4.0),
        Segment::new(6.0, 4.0, 0.0, 4.0),
        Segment::new(0.0, 4.0, 0.0, 0.0),
        Segment::new(2.0, 1.0, 2.6, 1.0),
        Segment::new(2.6, 1.0, 2.6, 1.7),
        Segment::new(4.2, 3.0, 5.0, 2.4),
    ])
    .unwrap()
}

fn scan_at(env: &Environment, p: Pose2) -> fleetslam_core::LaserScan {
    simulate_scan(
        env,
        &p,
        &LidarConfig::default(),
        &NoiseModel::default(),
        0.0,
        &mut SimRng::seed_from_u64(5),
    )
}

fn modes(c: &mut Criterion, name: &str, mut f: impl FnMut()) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    for parallel in [false, true] {
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            set_parallel(parallel);
            b.iter(&mut f);
        });
    }
    set_parallel(true);
    group.finish();
}

fn bench_matcher(c: &mut Criterion) {
    let env = room();
    let a = scan_at(&env, Pose2::new(3.0, 2.0, 0.1));
    let q = scan_at(&env, Pose2::new(3.15, 1.9, 0.2));
    let cfg = MatcherConfig::default();
    modes(c, "scan_match", || {
        black_box(scan_match(&a, &q, &Pose2::IDENTITY, &cfg).unwrap());
    });
}

fn bench_filter(c: &mut Criterion) {
    let env = room();
    let cfg = FilterConfig::default();
    let s0 = scan_at(&env, Pose2::new(1.0, 2.0, 0.0));
    let s1 = scan_at(&env, Pose2::new(1.2, 2.0, 0.0));
    let mut warm = rbpf_init(&cfg, Pose2::IDENTITY).unwrap();
    rbpf_update(&mut warm, &Pose2::IDENTITY, &s0);
    modes(c, "rbpf_update", || {
        let mut st = warm.clone();
        black_box(rbpf_update(&mut st, &Pose2::new(0.2, 0.0, 0.0), &s1));
    });
}

fn bench_features(c: &mut Criterion) {
    let env = room();
    let mut g = OccupancyGrid::centered([3.0, 2.0], 0.05, 160);
    for p in [Pose2::new(1.0, 1.0, 0.0), Pose2::new(3.0, 2.0, 0.0), Pose2::new(5.0, 3.0, 0.0)] {
        g.integrate_scan(&p, &scan_at(&env, p));
        g.integrate_scan(&p, &scan_at(&env, p));
    }
    let cfg = FeatureConfig::default();
    let f = extract_features(&g, &cfg);
    modes(c, "feature_matching", || {
        black_box(fleetslam_core::merge::match_features(&f, &f, 0.8, &cfg));
    });
}

criterion_group!(benches, bench_matcher, bench_filter, bench_features);
criterion_main!(benches);
