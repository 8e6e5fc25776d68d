//! Hot kernels under whichever backend the crate was built with. Benchmark
//! ids do not name the backend, so a sequential run saved as a baseline can
//! be compared directly against the default parallel build:
//!
//! ```text
//! cargo bench -p refaudit --no-default-features --bench kernels -- --save-baseline sequential
//! cargo bench -p refaudit --bench kernels -- --baseline sequential
//! ```

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refaudit::mask::{morphology, Morphology};
use refaudit::parallel;
use refaudit::phantom::{generate_phantom, PhantomParams};
use refaudit::quality::ssim_map;
use refaudit::stats::bootstrap_mean;
use refaudit::surface::{marching_cubes, masd, TriMesh};
use refaudit::{BinaryMask, Geometry, Volume3D};

fn cube(n: usize) -> Geometry {
    Geometry::axis_aligned([n; 3], [1.0; 3], [0.0; 3]).unwrap()
}

fn ball(n: usize, r: f64) -> BinaryMask {
    let c = (n as f64 - 1.0) / 2.0;
    BinaryMask::from_fn(cube(n), |x, y, z| {
        let d = [x, y, z].map(|v| v as f64 - c);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
    })
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> TriMesh {
    TriMesh {
        vertices: (0..n).map(|_| [0; 3].map(|_: u8| rng.random_range(-80.0..80.0))).collect(),
        triangles: vec![[0, 0, 0]],
    }
}

fn kernels(c: &mut Criterion) {
    eprintln!("backend: {}", if parallel::is_parallel() { "parallel" } else { "sequential" });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);

    let (a, b) = (cloud(&mut rng, 20_000), cloud(&mut rng, 20_000));
    g.bench_function("masd_20k", |bch| bch.iter(|| masd(black_box(&a), black_box(&b)).unwrap()));

    let geom = cube(48);
    let v1 = Volume3D::new(geom.clone(), (0..geom.len()).map(|_| rng.random_range(0.0..100.0)).collect()).unwrap();
    let v2 = v1.with_data(v1.data.iter().map(|v| v + rng.random_range(-5.0..5.0)).collect()).unwrap();
    g.bench_function("ssim_map_48", |bch| bch.iter(|| ssim_map(black_box(&v1), black_box(&v2)).unwrap()));

    let m = ball(64, 24.0);
    g.bench_function("close_r2_64", |bch| bch.iter(|| morphology(black_box(&m), Morphology::Close, 2).unwrap()));
    g.bench_function("marching_cubes_64", |bch| bch.iter(|| marching_cubes(black_box(&m)).unwrap()));

    let values: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
    g.bench_function("bootstrap_mean_500x1000", |bch| {
        bch.iter(|| bootstrap_mean(black_box(&values), 1000, 7).unwrap())
    });

    let params = PhantomParams { grid: [64; 3], spacing_mm: 4.0, ..PhantomParams::default() };
    g.bench_function("phantom_64", |bch| bch.iter(|| generate_phantom(black_box(3), params).unwrap()));
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
