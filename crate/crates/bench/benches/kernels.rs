use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use locmoment::hilbert::{self, DissipativeOperator};
use locmoment::linalg::CMatrix;
use locmoment::moments::{self, DisorderQuery, Proxy};
use locmoment::resolvent::{EnergyPoint, Resolvent};
use locmoment::spectral::{Interval, SpectralData};
use locmoment::stats::Estimator;
use locmoment::{birman_schwinger as bs, Complex64, Model, ModelSpec, Site};
use std::hint::black_box;

fn resolvent_columns(c: &mut Criterion) {
    let mut g = c.benchmark_group("resolvent_columns");
    for n in [250usize, 1000, 2000] {
        let m = Model::new(ModelSpec::lattice(1, n, 4.0)).unwrap();
        let h = m.hamiltonian(&m.sample(1)).unwrap();
        let z = EnergyPoint::new(1.0, 1e-3).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| {
            b.iter(|| Resolvent::new(h, z).unwrap().columns(&[n / 2]).unwrap())
        });
    }
    g.finish();
}

fn block_2d(c: &mut Criterion) {
    let m = Model::new(ModelSpec::lattice(2, 32, 4.0)).unwrap();
    let h = m.hamiltonian(&m.sample(2)).unwrap();
    let z = EnergyPoint::new(1.0, 1e-2).unwrap();
    c.bench_function("green_block_32x32", |b| {
        b.iter(|| Resolvent::new(&h, z).unwrap().block(Site::d2(4, 16), Site::d2(28, 16)).unwrap().op_norm)
    });
}

fn disorder_moment(c: &mut Criterion) {
    let m = Model::new(ModelSpec::lattice(1, 60, 4.0)).unwrap();
    let q = DisorderQuery {
        z: EnergyPoint::new(1.0, 0.0).unwrap(),
        x: Site::d1(10),
        y: Site::d1(40),
        proxy: Proxy::Chi,
        seed: 3,
    };
    c.bench_function("fm_disorder_n200", |b| b.iter(|| moments::fm_disorder(&m, &q, 0.3, 200, Estimator::PlainMean).unwrap().mean));
}

fn boole_profile(c: &mut Criterion) {
    let m = Model::new(ModelSpec::lattice(1, 200, 3.0)).unwrap();
    let s = SpectralData::new(&m.hamiltonian(&m.sample(4)).unwrap()).unwrap();
    let mut phi = vec![Complex64::new(0.0, 0.0); s.dim()];
    phi[100] = Complex64::new(1.0, 0.0);
    let t: Vec<f64> = (0..40).map(|k| 10f64.powf(-1.0 + 0.1 * k as f64)).collect();
    c.bench_function("boole_tail_n200", |b| {
        b.iter(|| moments::boole_tail(&s, Interval::all(), Site::d1(100), black_box(&phi), &t).unwrap().slope)
    });
}

fn eigencurves(c: &mut Criterion) {
    let m = Model::new(ModelSpec::lattice(1, 60, 2.0)).unwrap();
    let h = m.hamiltonian(&m.sample(5)).unwrap();
    let mut v = vec![0.0; 60];
    v[30] = 1.0;
    let xi: Vec<f64> = (0..=40).map(|k| 0.1 * k as f64).collect();
    c.bench_function("eigencurves_n60", |b| b.iter(|| bs::eigencurves(&h, &v, &xi).unwrap().curves()));
}

fn hilbert_transform(c: &mut Criterion) {
    let v = hilbert::uniform_grid(-100.0, 100.0, 4001);
    let g: Vec<Complex64> = v.iter().map(|&x| Complex64::new(-1.0 / (x * x + 1.0), 0.0)).collect();
    c.bench_function("hilbert_transform_4001", |b| b.iter(|| hilbert::hilbert_transform(&v, black_box(&g)).unwrap()));
    let b0 = CMatrix::from_fn(10, 10, |i, j| Complex64::new(if i == j { i as f64 } else { 0.1 }, 0.0));
    let op = DissipativeOperator::self_adjoint(b0).unwrap();
    let m = CMatrix::identity(10, 10);
    c.bench_function("sandwich_profile_10x10", |b| {
        b.iter(|| hilbert::sandwich_profile(&op, &m, &m, &v, 0.5).unwrap().max_hs())
    });
}

criterion_group!(benches, resolvent_columns, block_2d, disorder_moment, boole_profile, eigencurves, hilbert_transform);
criterion_main!(benches);
