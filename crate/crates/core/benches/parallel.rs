//! Sequential versus rayon-backed execution of the data-parallel kernels.
//!
//! `cargo bench -p aae` compares both paths in one binary; building with
//! `--no-default-features` turns the parallel path into the sequential one.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aae::dataio::{synthesize, SamplePair};
use aae::network::{build_unet, NetworkSpec};
use aae::tensor::gemm;
use aae::tensor::Tensor;
use aae::train;

fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Shapes of the forward, input-gradient and weight-gradient products of a
/// 64×64 decoder conv with 24 input and 8 output channels.
fn gemm_shapes(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_acc");
    for &(m, k, n) in &[(8, 216, 4096), (216, 8, 4096), (32, 576, 256)] {
        let a = values(m * k, 1);
        let b = values(k * n, 2);
        group.throughput(Throughput::Elements((m * k * n) as u64));
        let id = format!("{m}x{k}x{n}");
        group.bench_with_input(BenchmarkId::new("seq", &id), &(), |bench, _| {
            let mut out = vec![0.0; m * n];
            bench.iter(|| gemm::matmul_acc_seq(black_box(&a), black_box(&b), &mut out, m, k, n));
        });
        group.bench_with_input(BenchmarkId::new("parallel", &id), &(), |bench, _| {
            let mut out = vec![0.0; m * n];
            bench.iter(|| gemm::matmul_acc(black_box(&a), black_box(&b), &mut out, m, k, n));
        });
    }
    group.finish();

    let mut group = c.benchmark_group("matmul_nt_acc");
    let (m, p, k) = (8, 4096, 216);
    let a = values(m * p, 3);
    let b = values(k * p, 4);
    group.throughput(Throughput::Elements((m * p * k) as u64));
    group.bench_function("8x4096x216", |bench| {
        let mut out = vec![0.0; m * k];
        bench.iter(|| gemm::matmul_nt_acc(black_box(&a), black_box(&b), &mut out, m, p, k));
    });
    group.finish();
}

fn samples(n: usize) -> Vec<SamplePair> {
    (0..n)
        .map(|i| {
            let (grid, mask) = synthesize(11, i as u64, 64);
            SamplePair {
                id: format!("s{i}"),
                image: Tensor::new([1, 64, 64], grid.values).unwrap(),
                mask,
            }
        })
        .collect()
}

fn evaluation(c: &mut Criterion) {
    let (net, store) = build_unet(NetworkSpec::default(), 0).unwrap();
    let data = samples(8);
    let mut group = c.benchmark_group("evaluate_samples");
    group.sample_size(10);
    group.bench_function("seq", |bench| {
        bench.iter(|| train::evaluate_samples_seq(&net, &store, black_box(&data)).unwrap())
    });
    group.bench_function("parallel", |bench| {
        bench.iter(|| train::evaluate_samples(&net, &store, black_box(&data)).unwrap())
    });
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let (net, store) = build_unet(NetworkSpec::default(), 0).unwrap();
    let data = samples(1);
    let target = Tensor::new([1, 64, 64], data[0].mask.to_values()).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("forward", |bench| {
        bench.iter(|| net.forward_train(&store, &data[0].image, &data[0].mask, 1.0).unwrap())
    });
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| {
            let mut pass = net.forward_train(&store, &data[0].image, &data[0].mask, 1.0).unwrap();
            let loss = pass.tape.bce_loss(pass.output, &target).unwrap();
            pass.tape.backward(loss).unwrap();
        })
    });
    group.finish();
}

criterion_group!(benches, gemm_shapes, evaluation, training_step);
criterion_main!(benches);
