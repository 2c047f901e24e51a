use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samnet_core::data::generate_scene;
use samnet_core::metrics::compute_metrics;
use samnet_core::tensor::conv2d_forward;
use samnet_core::{AttentionMode, Graph, ParamStore, SceneFamily, Shape, Som, SomConfig, Tensor};

fn random(dims: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).unwrap();
    let v = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, v).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("conv2d");
    for (cin, cout, hw) in [(3, 8, 64), (16, 16, 32), (32, 32, 16)] {
        let x = random([2, cin, hw, hw], -1.0, 1.0, &mut rng);
        let k = random([cout, cin, 3, 3], -0.3, 0.3, &mut rng);
        let b = random([1, 1, 1, cout], -0.1, 0.1, &mut rng);
        let id = format!("{cin}->{cout}@{hw}");
        group.bench_function(BenchmarkId::new("forward", &id), |bench| {
            bench.iter(|| conv2d_forward(black_box(&x), &k, Some(&b), 1, 1).unwrap())
        });
        group.bench_function(BenchmarkId::new("forward_backward", &id), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (vx, vk, vb) = (g.param(x.clone()), g.param(k.clone()), g.param(b.clone()));
                let y = g.conv2d(vx, vk, Some(vb), 1, 1).unwrap();
                let loss = g.mean(y).unwrap();
                g.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn som_read(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("som_transfer");
    for (channels, hw, slots) in [(8, 16, 4), (16, 8, 4), (16, 8, 8)] {
        let mut store = ParamStore::new();
        let som = Som::new(&mut store, "m", channels, (hw, hw), SomConfig { slots }, &mut rng);
        let query = random([2, channels, hw, hw], -1.0, 1.0, &mut rng);
        let id = format!("c{channels}@{hw} n{slots}");
        group.bench_function(BenchmarkId::new("forward_backward", id), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let p = store.bind(&mut g);
                let q = g.constant(query.clone());
                let (z, _) = som.transfer(&mut g, &p, q, &AttentionMode::Attached).unwrap();
                let loss = g.mean(z).unwrap();
                g.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred = random([1, 1, 256, 256], 0.5, 9.0, &mut rng);
    let gt = random([1, 1, 256, 256], 0.5, 9.0, &mut rng);
    c.bench_function("metrics/256x256", |bench| bench.iter(|| compute_metrics(black_box(&pred), &gt).unwrap()));
}

fn scenes(c: &mut Criterion) {
    let mut group = c.benchmark_group("scene");
    for family in SceneFamily::ALL {
        let mut seed = 0;
        group.bench_function(BenchmarkId::new("64x64", family.name()), |bench| {
            bench.iter(|| {
                seed += 1;
                generate_scene(family, seed, 64, 64).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, som_read, metrics, scenes);
criterion_main!(benches);
