use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_distr::StandardNormal;

use inclusive_gen::data::{make_grid_gaussians, DataKind};
use inclusive_gen::evaluation::{ivom_batch, IvomSettings};
use inclusive_gen::matching::nearest_neighbors;
use inclusive_gen::models::{Backbone, FeatureSpace};
use inclusive_gen::nn::Shape;
use inclusive_gen::par;
use inclusive_gen::rng;
use inclusive_gen::training::{Trainer, TrainConfig};

fn normals(seed: u64, n: usize) -> Vec<f32> {
    let mut r = rng::stream(seed, 0);
    (0..n).map(|_| r.sample::<f32, _>(StandardNormal)).collect()
}

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("nearest_neighbors");
    for dim in [2usize, 96] {
        let targets = normals(1, 512 * dim);
        let candidates = normals(2, 4096 * dim);
        for (name, on) in MODES {
            par::set_parallel(on);
            group.bench_with_input(BenchmarkId::new(name, dim), &dim, |b, &d| b.iter(|| nearest_neighbors(&targets, &candidates, d).unwrap()));
        }
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let data = make_grid_gaussians(5, 5, 0.05, 2048, 0).unwrap();
    let cfg = TrainConfig { epochs: 1, rematch_period: 1, pool_multiplier: 2, lambda: Some(1.0), ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut t = Trainer::new(&cfg, &data, None).unwrap();
                t.run(|_, _| {}).unwrap();
            })
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let shape = Shape::new(1, 16, 16);
    let (g, _) = Backbone::Mlp { hidden: 64, depth: 2 }.build(8, shape, DataKind::Images, &mut rng::stream(3, 0)).unwrap();
    let queries = g.generate(&normals(4, 64 * 8)).unwrap();
    let settings = IvomSettings { steps: 50, restarts: 1, ..IvomSettings::default() };
    let mut group = c.benchmark_group("ivom");
    group.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        group.bench_function(name, |b| b.iter(|| ivom_batch(&queries, 64, &g, &FeatureSpace::Pixel, None, &settings, None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, matching, training, retrieval);
criterion_main!(benches);
