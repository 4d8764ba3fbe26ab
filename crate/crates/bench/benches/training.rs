use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use replab::probe::{fit_probe, ProbeConfig};
use replab::toytrain::{info_nce, HeadKind, ToyResNet};
use replab::{LabelMatrix, LayerTag, RepMatrix};

fn gaussian(seed: u64, m: usize, p: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((m, p), |_| rng.sample(StandardNormal))
}

fn bench_info_nce(c: &mut Criterion) {
    let z = gaussian(1, 256, 16);
    c.bench_function("info_nce_n128_q16", |b| b.iter(|| info_nce(z.view(), 0.5, true).unwrap()));
}

fn bench_backprop(c: &mut Criterion) {
    let x = gaussian(2, 256, 32);
    let nce = ToyResNet::new(32, 64, 4, HeadKind::Projection { dim: 16 }, 0).unwrap();
    c.bench_function("contrastive_step_256x32_w64_b4", |b| {
        b.iter(|| nce.contrastive_loss_grad(x.view(), 0.5).unwrap())
    });
    let sup = ToyResNet::new(32, 64, 4, HeadKind::Classifier { classes: 4 }, 0).unwrap();
    let classes: Vec<usize> = (0..256).map(|i| i % 4).collect();
    c.bench_function("supervised_step_256x32_w64_b4", |b| {
        b.iter(|| sup.supervised_loss_grad(x.view(), &classes).unwrap())
    });
}

fn bench_probe(c: &mut Criterion) {
    let classes: Vec<usize> = (0..800).map(|i| i % 4).collect();
    let labels = LabelMatrix::from_indices(&classes, 4).unwrap();
    let mut x = gaussian(3, 800, 64);
    for (i, &k) in classes.iter().enumerate() {
        x[[i, k]] += 1.5;
    }
    let rep = RepMatrix::new(x, LayerTag::anonymous("probe")).unwrap();
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    group.bench_function("fit_m800_p64_c4", |b| b.iter(|| fit_probe(&rep, &labels, &ProbeConfig::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_info_nce, bench_backprop, bench_probe);
criterion_main!(benches);
