use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use langfield::grouping::hungarian_match;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hungarian(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("hungarian");
    for n in [8usize, 32, 128] {
        let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| hungarian_match(cost).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, hungarian);
criterion_main!(benches);
