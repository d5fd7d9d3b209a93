//! Parallel vs sequential timings of the hot kernels: dense products,
//! nearest-neighbour search and a denoiser forward pass.
//!
//! "sequential" runs inside a one-thread rayon pool, so both variants
//! execute exactly the same code. Building with `--no-default-features`
//! removes rayon altogether.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tabdiff::datasets::mixed_classification;
use tabdiff::denoiser::{Denoiser, DenoiserConfig, DenoiserInput, TargetInput};
use tabdiff::eval::nearest_distances;
use tabdiff::tensor::{Graph, ParamStore, Tensor};

fn normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()),
    ]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, ())> {
    vec![("sequential", ())]
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_: &(), f: impl FnOnce() -> R) -> R {
    f()
}

fn dense_product(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (m, k, n) = (1024, 256, 256);
    let x = Tensor::new(vec![m, k], normal(m * k, &mut rng)).unwrap();
    let store = ParamStore::new();
    let mut group = c.benchmark_group("linear_1024x256x256");
    for (name, pool) in modes() {
        let w = Tensor::new(vec![k, n], normal(k * n, &mut rng)).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run(&pool, || {
                    let mut g = Graph::new(&store);
                    let xv = g.input(x.clone());
                    let wv = g.input(w.clone());
                    let out = g.linear(xv, wv, None).unwrap();
                    g.value(out).data()[0]
                })
            })
        });
    }
    group.finish();
}

fn nearest_neighbours(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let width = 8;
    let synth = normal(1000 * width, &mut rng);
    let real = normal(2000 * width, &mut rng);
    let mut group = c.benchmark_group("dcr_1000x2000");
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&pool, || nearest_distances(&synth, &real, width).unwrap()))
        });
    }
    group.finish();
}

fn denoiser_forward(c: &mut Criterion) {
    let raw = mixed_classification(256, 0);
    let schema = raw.schema.clone();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Denoiser::new(&schema, DenoiserConfig::default(), &mut store, &mut rng).unwrap();
    let batch = 256;
    let numeric = normal(batch * 2, &mut rng);
    let codes: Vec<usize> = (0..batch).map(|i| i % 3).collect();
    let eff: Vec<bool> = (0..batch * 3).map(|i| i % 2 == 0).collect();
    let target: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    let t: Vec<usize> = (0..batch).map(|i| 1 + i % 100).collect();
    let input = DenoiserInput {
        batch,
        numeric: &numeric,
        codes: &codes,
        eff: &eff,
        target: TargetInput::Codes(&target),
        t: &t,
    };
    let mut group = c.benchmark_group("denoiser_forward_256");
    group.sample_size(20);
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&pool, || net.predict(&store, &input).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, dense_product, nearest_neighbours, denoiser_forward);
criterion_main!(benches);
