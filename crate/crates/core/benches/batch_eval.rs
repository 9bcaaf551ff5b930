use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tavg_core::discriminator::init_discriminator;
use tavg_core::generator::init_generator;
use tavg_core::metrics::{lpips, mse, ssim, ConvFeatureExtractor, SsimParams};
use tavg_core::nn::Phase;
use tavg_core::par::{self, Exec};
use tavg_core::tensor::Tensor;
use tavg_core::trainer::{ModelConfig, TrainMode};

const BATCH: usize = 8;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn model_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        gen_base_channels: 16,
        disc_base_channels: 16,
        disc_gru_channels: 16,
        encoder_channels: vec![8, 16, 16, 32, 32],
        ..ModelConfig::default()
    }
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench_generator(c: &mut Criterion) {
    let cfg = model_config();
    let g = init_generator(&cfg.generator(TrainMode::WithGru), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = random(&mut rng, &[BATCH, cfg.noise_dim]);
    let y = random(&mut rng, &[BATCH, 128]);
    let mut group = c.benchmark_group("generator_forward");
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_exec(mode, || g.forward(&z, &y, Phase::Train).unwrap()))
        });
    }
    group.finish();
}

fn bench_discriminator(c: &mut Criterion) {
    let cfg = model_config();
    let d = init_discriminator(&cfg.discriminator(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[BATCH, 3, 16, 16])).collect();
    let y = random(&mut rng, &[BATCH, 128]);
    let mut group = c.benchmark_group("discriminator_forward");
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_exec(mode, || d.forward(&frames, &y, Phase::Train).unwrap()))
        });
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let fx = ConvFeatureExtractor::random(0);
    let params = SsimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(Tensor, Tensor)> = (0..BATCH * 3)
        .map(|_| (random(&mut rng, &[3, 16, 16]), random(&mut rng, &[3, 16, 16])))
        .collect();
    let mut group = c.benchmark_group("frame_metrics");
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_exec(mode, || {
                    par::map_slice(&pairs, |(a, t)| {
                        mse(a, t).unwrap() + ssim(a, t, &params).unwrap() + lpips(a, t, &fx).unwrap()
                    })
                })
            })
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_generator, bench_discriminator, bench_metrics
}
criterion_main!(benches);
