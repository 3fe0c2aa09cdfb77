use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use resperturb_core::accountant::gaussian_rdp;
use resperturb_core::attack::roc_curve;
use resperturb_core::model::{ArchConfig, NoiseConfig, ResidualNet};
use resperturb_core::nn::{circulant_matvec, circulant_matvec_fft, Mode};
use resperturb_core::rademacher::{sigma_expectation, SampleSet, SigmaMethod};
use resperturb_core::rng::stream;
use resperturb_core::sde::{swirl_field, ImageGrid};
use resperturb_core::Tensor;

fn network(c: &mut Criterion) {
    let mut rng = stream(1, 0);
    let x = Tensor::matrix(32, 20, (0..640).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut group = c.benchmark_group("residual_net_step");
    for (name, noise) in [
        ("none", NoiseConfig::none()),
        ("additive", NoiseConfig::additive(1.0)),
        ("multiplicative", NoiseConfig::multiplicative(1.0, 0.5)),
    ] {
        let net = ResidualNet::new(ArchConfig::new(20, 4, 2), noise, &mut stream(2, 0)).unwrap();
        let dlogits = Tensor::filled(&[32, 2], 0.1);
        group.bench_function(name, |b| {
            let mut noise_rng = stream(3, 0);
            b.iter(|| {
                let (logits, cache) = net.forward(black_box(&x), Mode::Train, &mut noise_rng).unwrap();
                black_box(logits);
                black_box(net.backward(&cache, &dlogits).unwrap())
            })
        });
    }
    group.finish();
}

fn circulant(c: &mut Criterion) {
    let mut group = c.benchmark_group("circulant_matvec");
    for d in [16usize, 64, 256] {
        let mut rng = stream(4, d as u64);
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::new("direct", d), &d, |b, _| {
            b.iter(|| circulant_matvec(black_box(&row), black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fft", d), &d, |b, _| {
            b.iter(|| circulant_matvec_fft(black_box(&row), black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn accountant(c: &mut Criterion) {
    c.bench_function("gaussian_rdp", |b| b.iter(|| gaussian_rdp(black_box(4.0), 1.0, 2.0).unwrap()));
}

fn sigma(c: &mut Criterion) {
    let samples = SampleSet::random(16, 4, 0.05, 1.0, &mut stream(5, 0)).unwrap();
    let mut group = c.benchmark_group("sigma_expectation");
    group.sample_size(10);
    group.bench_function("enumerate_n16", |b| {
        b.iter(|| sigma_expectation(&samples, 0.5, SigmaMethod::Enumerate).unwrap())
    });
    group.bench_function("monte_carlo_1e5", |b| {
        b.iter(|| {
            sigma_expectation(
                &samples,
                0.5,
                SigmaMethod::MonteCarlo {
                    draws: 100_000,
                    seed: 1,
                },
            )
            .unwrap()
        })
    });
    group.finish();
}

fn swirl(c: &mut Criterion) {
    let img = ImageGrid::test_pattern(64, 64, 3).unwrap();
    c.bench_function("swirl_64x64x3", |b| b.iter(|| swirl_field(black_box(&img))));
}

fn roc(c: &mut Criterion) {
    let mut rng = stream(6, 0);
    let pos: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let neg: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 0.9).collect();
    c.bench_function("roc_curve_2000", |b| b.iter(|| roc_curve(black_box(&pos), black_box(&neg)).unwrap()));
}

criterion_group!(benches, network, circulant, accountant, sigma, swirl, roc);
criterion_main!(benches);
