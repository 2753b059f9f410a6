use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use svaudit_bench::benchmark_set;
use svaudit_core::{DcfConfig, ErrorCurve, Label};

fn scores(n_per_side: u64) -> (Vec<f64>, Vec<f64>) {
    let (set, _) = benchmark_set(1, n_per_side);
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for record in &set.records {
        match record.label {
            Label::Target => targets.push(record.score),
            Label::Nontarget => nontargets.push(record.score),
        }
    }
    (targets, nontargets)
}

fn bench_error_curve(c: &mut Criterion) {
    let mut group = c.benchmark_group("error_curve");
    for n in [10_000u64, 100_000, 500_000] {
        let (targets, nontargets) = scores(n);
        group.bench_with_input(BenchmarkId::new("compute", n), &n, |b, _| {
            b.iter(|| ErrorCurve::compute(&targets, &nontargets).unwrap())
        });
        let curve = ErrorCurve::compute(&targets, &nontargets).unwrap();
        let config = DcfConfig::default();
        group.bench_with_input(BenchmarkId::new("min_dcf", n), &n, |b, _| {
            b.iter(|| curve.min_dcf(&config))
        });
        group.bench_with_input(BenchmarkId::new("eer", n), &n, |b, _| b.iter(|| curve.eer()));
    }
    group.finish();
}

criterion_group!(benches, bench_error_curve);
criterion_main!(benches);
