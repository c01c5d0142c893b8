use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{Vector2, Vector3};

use orbinspect::config::ScenarioConfig;
use orbinspect::control::solve_riccati;
use orbinspect::frames::PlantMatrices;
use orbinspect::observer::{HistoryStack, StackSample};
use orbinspect::planner::kmeans_cluster;
use orbinspect::scene::fibonacci_sphere;
use orbinspect::sim::run_scenario;

fn riccati(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let pm = PlantMatrices::new(cfg.m, cfg.n).unwrap();
    let n_c = Vector3::new(-0.8, 0.5, 0.3).normalize();
    let steps = (cfg.segment_length / cfg.dt).round() as usize * cfg.riccati_substeps;
    c.bench_function("riccati_segment", |b| {
        b.iter(|| {
            solve_riccati(&cfg.q(), &cfg.r(), &cfg.q_f(), cfg.gamma_c, &n_c, &pm, 0.0, cfg.segment_length, black_box(steps))
                .unwrap()
        })
    });
}

fn short_run(c: &mut Criterion) {
    let cfg = ScenarioConfig { duration: 50.0, ..ScenarioConfig::default() };
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    g.bench_function("run_50s", |b| b.iter(|| run_scenario(black_box(&cfg)).unwrap()));
    g.finish();
}

fn kmeans(c: &mut Criterion) {
    let pts: Vec<_> = fibonacci_sphere(99, 10.0).unwrap().iter().map(|f| f.p_h).collect();
    c.bench_function("kmeans_99_k2", |b| b.iter(|| kmeans_cluster(black_box(&pts), 2, 7, 100).unwrap()));
}

fn stack_insert(c: &mut Criterion) {
    let samples: Vec<_> = (0..1000)
        .map(|k| {
            let a = k as f64 * 0.37;
            let y = Vector2::new(a.sin(), (1.3 * a).cos()) * (1.0 + (k % 7) as f64 * 0.1);
            StackSample::new(y, y * 40.0, k as f64)
        })
        .collect();
    c.bench_function("stack_insert_1000", |b| {
        b.iter(|| {
            let mut st = HistoryStack::new(100).unwrap();
            for s in &samples {
                st.insert(*s);
            }
            st.sigma_y
        })
    });
}

criterion_group!(benches, riccati, short_run, kmeans, stack_insert);
criterion_main!(benches);
