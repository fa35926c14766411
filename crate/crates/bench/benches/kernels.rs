use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sweep_core::{
    get_problem, project_onto_c, simulate_catchup, simulate_penalty, solve_penalty_route, transcribe_penalty,
    ControlSignal, Grid, SolverOptions, TranscriptionConfig,
};

fn reference(name: &str, n: usize) -> ControlSignal {
    let r = get_problem(name).unwrap().reference.unwrap();
    ControlSignal::from_fn(Grid::new(n).unwrap(), |t| (r.control)(t)).unwrap()
}

fn projection(c: &mut Criterion) {
    let ellipse = get_problem("ellipse-steer").unwrap().spec;
    let disk = get_problem("disk-push").unwrap().spec;
    c.bench_function("project/disk", |b| b.iter(|| project_onto_c(&disk, black_box(&[1.3, -0.4]), 1e-12)));
    c.bench_function("project/ellipse", |b| {
        b.iter(|| project_onto_c(&ellipse, black_box(&[2.5, 1.7]), 1e-12))
    });
}

fn simulation(c: &mut Criterion) {
    let p = get_problem("disk-push").unwrap().spec;
    let mut g = c.benchmark_group("simulate");
    for n in [100, 1000] {
        let ctrl = reference("disk-push", n);
        g.bench_with_input(BenchmarkId::new("catchup", n), &ctrl, |b, ctrl| b.iter(|| simulate_catchup(&p, ctrl)));
        g.bench_with_input(BenchmarkId::new("penalty", n), &ctrl, |b, ctrl| {
            b.iter(|| simulate_penalty(&p, ctrl, 200.0, 10))
        });
    }
    g.finish();
}

fn nlp(c: &mut Criterion) {
    let p = get_problem("interval-1d").unwrap().spec;
    let cfg = TranscriptionConfig::penalty(100, 200.0, 0.0);
    let nlp = transcribe_penalty(&p, &cfg).unwrap();
    let z = vec![0.1; nlp.n_vars];
    c.bench_function("nlp/constraint-jacobians", |b| {
        b.iter(|| (nlp.eq_jac(black_box(&z)), nlp.ineq_jac(black_box(&z))))
    });

    let guess = reference("interval-1d", 50);
    let cfg = TranscriptionConfig::penalty(50, 200.0, 0.0);
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("penalty-route/interval-1d/N50", |b| {
        b.iter(|| solve_penalty_route(&p, &cfg, Some(&guess), &SolverOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, projection, simulation, nlp);
criterion_main!(benches);
