use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use triplenet_core::graph::{build, forward_eval, ModelConfig, Variant, Weights};
use triplenet_core::kernels::conv2d;
use triplenet_core::parallel::{set_parallelism, Parallelism};
use triplenet_core::Tensor;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::randn(&[8, 64, 32, 32], 1.0, &mut rng).unwrap();
    let w = Tensor::<f32>::randn(&[64, 64, 3, 3], 0.05, &mut rng).unwrap();
    let mut group = c.benchmark_group("conv2d_8x64x32x32_k3");
    for (name, mode) in MODES {
        set_parallelism(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| conv2d(black_box(&x), black_box(&w), 1, 1).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_eval_32px_batch8");
    group.sample_size(10);
    let x = Tensor::<f32>::randn(&[8, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for variant in [Variant::S, Variant::B] {
        let g = build(&ModelConfig::new(variant).with_input_size(32)).unwrap();
        let weights = Weights::<f32>::init(&g, 0).unwrap();
        for (name, mode) in MODES {
            set_parallelism(mode);
            group.bench_function(BenchmarkId::new(variant.to_string(), name), |b| {
                b.iter(|| forward_eval(&g, &weights, black_box(&x)).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, conv, inference);
criterion_main!(benches);
