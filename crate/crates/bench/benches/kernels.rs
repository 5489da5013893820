use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use levelguide::ela::{ElaConfig, ElaEncoder};
use levelguide::nn::{Graph, ParameterSet};
use levelguide::saea::fast_nondominated_sort;
use levelguide::surrogate::GpModel;
use levelguide_bench::{encoder_input, random_matrix, random_points, rng};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [16, 64, 128] {
        let mut r = rng(n as u64);
        let (a, b) = (random_matrix(n, n, &mut r), random_matrix(n, n, &mut r));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, y) = (g.input(a.clone()), g.input(b.clone()));
                g.matmul(x, y).unwrap()
            })
        });
    }
    group.finish();
}

fn encoder(c: &mut Criterion) {
    let mut r = rng(1);
    let mut params = ParameterSet::new();
    let enc = ElaEncoder::new(&mut params, "ela", ElaConfig::default(), &mut r).unwrap();
    let mut group = c.benchmark_group("encoder");
    for n in [100, 300] {
        let input = encoder_input(n, 2, &mut r);
        group.bench_with_input(BenchmarkId::new("forward", n), &n, |bench, _| {
            bench.iter(|| enc.encode(&params, &input).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let out = enc.forward(&mut g, &params, &input).unwrap();
                let loss = g.sum_all(out);
                let mut p = params.clone();
                g.backward(loss, &mut p).unwrap()
            })
        });
    }
    group.finish();
}

fn gp_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_fit");
    group.sample_size(10);
    for n in [100, 300] {
        let mut r = rng(n as u64);
        let x = random_points(n, 3, &mut r);
        let y: Vec<f64> = x.iter().map(|v| (4.0 * v[0]).sin() + v[1] * v[2]).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| GpModel::fit(&x, &y).unwrap())
        });
    }
    group.finish();
}

fn nondominated_sort(c: &mut Criterion) {
    let mut group = c.benchmark_group("nondominated_sort");
    for n in [100, 400] {
        let pts = random_points(n, 3, &mut rng(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| fast_nondominated_sort(&pts))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, encoder, gp_fit, nondominated_sort);
criterion_main!(benches);
