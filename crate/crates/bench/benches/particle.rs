use cdssm::{
    derive_seed, ffbs, make_bm, make_bootstrap, particle_filter, BridgeKind, DensityMode, EndpointProposal,
    FilterOptions, Purpose,
};
use cdssm_bench::{double_well, ou};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn filters(c: &mut Criterion) {
    let mut group = c.benchmark_group("filter");
    group.sample_size(10);
    for (name, ssm) in [("ou", ou(20, 20)), ("double_well", double_well(20, 20))] {
        let boot = make_bootstrap(ssm.clone());
        let bm = make_bm(
            ssm,
            EndpointProposal::default(),
            BridgeKind::default(),
            DensityMode::Auto,
        )
        .unwrap();
        for n in [100, 1000] {
            let opts = FilterOptions::new(n, 7);
            group.bench_with_input(BenchmarkId::new(format!("bootstrap/{name}"), n), &opts, |b, o| {
                b.iter(|| particle_filter(&boot, o).unwrap().log_likelihood)
            });
            group.bench_with_input(BenchmarkId::new(format!("bm/{name}"), n), &opts, |b, o| {
                b.iter(|| particle_filter(&bm, o).unwrap().log_likelihood)
            });
        }
    }
    group.finish();
}

fn smoothing(c: &mut Criterion) {
    let mut group = c.benchmark_group("ffbs");
    group.sample_size(10);
    let bm = make_bm(
        ou(20, 20),
        EndpointProposal::default(),
        BridgeKind::default(),
        DensityMode::Auto,
    )
    .unwrap();
    let cloud = particle_filter(&bm, &FilterOptions::new(200, 7).history(true)).unwrap();
    for draws in [1, 10] {
        group.bench_with_input(BenchmarkId::from_parameter(draws), &draws, |b, &m| {
            b.iter(|| {
                ffbs(&bm, &cloud, m, derive_seed(7, Purpose::Backward, 0), false)
                    .unwrap()
                    .len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, filters, smoothing);
criterion_main!(benches);
