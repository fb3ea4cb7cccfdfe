use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use infobound::bounds_finite::{exact_cmi_k, lambert_w0, SuperSampleSpec};
use infobound::ld_engine::{run_ld_observed, sample_supersample};
use infobound::seeding::stream_rng;
use infobound::{DataSource, FiniteLearningProblem, LDSchedule, Model};

fn exact(c: &mut Criterion) {
    let p = FiniteLearningProblem::random(&mut stream_rng(1, 0), 3, 3, 3).unwrap();
    let spec = SuperSampleSpec::for_problem(&p, 2).unwrap();
    c.bench_function("exact_cmi_k n=3 |Z|=3 |W|=3 k=2", |b| {
        b.iter(|| exact_cmi_k(black_box(&p), &spec).unwrap())
    });
}

fn langevin(c: &mut Criterion) {
    let model = Model::logistic(20, 2).unwrap();
    let source = DataSource::symmetric_blobs(20, 1.0, 1.0, 2024).materialize().unwrap();
    let pair = sample_supersample(&source, 50, 3).unwrap();
    let schedule = LDSchedule::constant(500, 0.01, 1e4).unwrap();
    let init = model.init_params(0);
    c.bench_function("LD branch d=20 n=50 T=500", |b| {
        b.iter(|| run_ld_observed(&model, &pair, 1, &schedule, &init, 9, |_| Ok(())).unwrap())
    });
}

fn lambert(c: &mut Criterion) {
    let xs: Vec<f64> = (0..1000).map(|i| -0.36 + 1e-3 * (i * i) as f64).collect();
    c.bench_function("lambert_w0 x1000", |b| {
        b.iter(|| xs.iter().map(|&x| lambert_w0(black_box(x)).unwrap()).sum::<f64>())
    });
}

criterion_group!(benches, exact, langevin, lambert);
criterion_main!(benches);
