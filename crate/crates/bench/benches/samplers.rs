use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatialgl::gibbs::GibbsSampler;
use spatialgl::selection::{fdr_threshold, PosteriorSource, TailProbMatrix};
use spatialgl::vb::{VBConfig, VBPosterior, VbProblem};
use spatialgl_bench::fixture;
use std::hint::black_box;

const SIZES: [(usize, usize, usize); 2] = [(100, 6, 30), (300, 12, 100)];

fn gibbs_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("gibbs_sweep");
    for (n, cc, d) in SIZES {
        let f = fixture(n, cc, d, 1);
        let mut sampler =
            GibbsSampler::new(&f.dataset, &f.spatial, &f.hyper, f.state.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        group.bench_function(
            BenchmarkId::from_parameter(format!("n{n}_c{cc}_d{d}")),
            |b| b.iter(|| sampler.sweep(&mut rng).unwrap()),
        );
    }
    group.finish();
}

fn vb(c: &mut Criterion) {
    let mut group = c.benchmark_group("vb");
    for (n, cc, d) in SIZES {
        let f = fixture(n, cc, d, 1);
        let problem =
            VbProblem::new(&f.dataset, &f.spatial, &f.hyper, VBConfig::default()).unwrap();
        let init = VBPosterior::initialize(&f.dataset, &f.hyper, &f.w_ridge).unwrap();
        let id = format!("n{n}_c{cc}_d{d}");
        group.bench_function(BenchmarkId::new("sweep", &id), |b| {
            b.iter_batched(
                || init.clone(),
                |mut post| problem.sweep(&mut post).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
        group.bench_function(BenchmarkId::new("elbo", &id), |b| {
            b.iter(|| problem.elbo(black_box(&init)).unwrap())
        });
    }
    group.finish();
}

fn fdr(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = DMatrix::from_fn(486, 56, |_, _| rand::Rng::random::<f64>(&mut rng));
    let tail = TailProbMatrix {
        p,
        c_star: 0.044,
        source: PosteriorSource::Mcmc,
        n: 5000,
    };
    c.bench_function("fdr_threshold_486x56", |b| {
        b.iter(|| fdr_threshold(black_box(&tail), 0.05).unwrap())
    });
}

criterion_group!(benches, gibbs_sweep, vb, fdr);
criterion_main!(benches);
