//! Hot kernels on the rayon pool versus a one-thread pool. Built with
//! `--no-default-features`, both variants take the sequential path.

use std::hint::black_box;

use criterion::measurement::WallTime;
use criterion::{criterion_group, criterion_main, BenchmarkGroup, Criterion};
use depthsweep::eval::NeighborGrid;
use depthsweep::geometry::{warp_to_volume, DepthHypotheses, Vector3};
use depthsweep::postprocess::{fuse, FilterConfig, FuseView};
use depthsweep::scene::{generate_scene, ScalarMap, SceneSpec};
use depthsweep::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn both<F: Fn() + Sync>(group: &mut BenchmarkGroup<'_, WallTime>, f: F) {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    group.bench_function("rayon", |b| b.iter(&f));
    group.bench_function("one_thread", |b| b.iter(|| single.install(&f)));
}

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn conv3d(c: &mut Criterion) {
    let x = random(&[8, 16, 24, 32], 1);
    let w = random(&[8, 8, 3, 3, 3], 2);
    let mut g = c.benchmark_group("conv3d_8x16x24x32");
    both(&mut g, || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        black_box(tape.conv3d(xv, wv, None, 1).unwrap());
    });
    g.finish();
}

fn scene() -> depthsweep::scene::SceneBundle {
    generate_scene(&SceneSpec::toy(3, 128, 96, 5, 2)).unwrap()
}

fn warp(c: &mut Criterion) {
    let s = scene();
    let feat = random(&[16, 24, 32], 3);
    let hyp: DepthHypotheses = s.hypotheses;
    let depths = hyp.samples();
    let (r, src) = (&s.views[0].camera, &s.views[1].camera);
    let mut g = c.benchmark_group("warp_16x48x24x32");
    both(&mut g, || {
        black_box(warp_to_volume(&feat, r, src, &depths, 0.25).unwrap());
    });
    g.finish();
}

fn nn_grid(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cloud: Vec<Vector3<f64>> = (0..20_000)
        .map(|_| {
            Vector3::new(
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..10.0),
            )
        })
        .collect();
    let queries: Vec<Vector3<f64>> = cloud
        .iter()
        .map(|p| p + Vector3::new(0.3, -0.2, 0.1))
        .collect();
    let mut g = c.benchmark_group("nn_grid_20k");
    g.bench_function("build_and_query", |b| {
        b.iter(|| {
            let grid = NeighborGrid::new(&cloud).unwrap();
            black_box(queries.iter().map(|q| grid.nearest(q).1).sum::<f64>())
        })
    });
    both(&mut g, || {
        black_box(depthsweep::eval::accuracy_distance(&queries, &cloud, 20.0).unwrap());
    });
    g.finish();
}

fn render(c: &mut Criterion) {
    let spec = SceneSpec::toy(5, 128, 96, 3, 2);
    let mut g = c.benchmark_group("render_3x128x96");
    g.sample_size(10);
    both(&mut g, || {
        black_box(generate_scene(&spec).unwrap());
    });
    g.finish();
}

fn fusion(c: &mut Criterion) {
    let s = scene();
    let gts = s.ground_truth.clone().unwrap();
    let conf = ScalarMap::filled(128, 96, 1.0);
    let views: Vec<FuseView> = s
        .views
        .iter()
        .zip(&gts)
        .map(|(v, gt)| FuseView {
            depth: &gt.depth,
            confidence: &conf,
            camera: &v.camera,
            image: &v.image,
        })
        .collect();
    let cfg = FilterConfig::default();
    let mut g = c.benchmark_group("fuse_5x128x96");
    g.sample_size(10);
    both(&mut g, || {
        black_box(fuse(&views, &cfg).unwrap());
    });
    g.finish();
}

criterion_group!(benches, conv3d, warp, nn_grid, render, fusion);
criterion_main!(benches);
