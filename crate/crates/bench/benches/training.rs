use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use emobias_core::gbt::{fit_tree_sorted, softmax_grad_hess, train, SortedColumns};
use emobias_core::{Quadrant, TrainParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Roughly the shape of one retraining job: ~230 rows of 260 features.
fn data(n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Quadrant>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<Quadrant> = (0..n).map(|i| Quadrant::ALL[i % 4]).collect();
    let x = y
        .iter()
        .map(|q| {
            (0..d)
                .map(|j| rng.random::<f64>() + if j % 4 == q.index() { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    (x, y)
}

fn bench_training(c: &mut Criterion) {
    let (x, y) = data(230, 260);
    let mut g = c.benchmark_group("gbt");
    g.sample_size(10);
    g.bench_function("train_default_230x260", |b| {
        b.iter(|| train(&x, &y, &TrainParams::default()).unwrap())
    });

    let sorted = SortedColumns::new(&x);
    let margins = vec![vec![0.0; 4]; x.len()];
    let labels: Vec<usize> = y.iter().map(|q| q.index()).collect();
    let (grad, hess) = softmax_grad_hess(&margins, &labels, &vec![1.0; x.len()]).unwrap();
    let g0: Vec<f64> = grad.iter().map(|r| r[0]).collect();
    let h0: Vec<f64> = hess.iter().map(|r| r[0]).collect();
    g.bench_function("fit_tree_depth3_230x260", |b| {
        b.iter(|| fit_tree_sorted(&sorted, &g0, &h0, &TrainParams::default()))
    });
    g.bench_function("presort_230x260", |b| {
        b.iter_batched(|| x.clone(), |x| SortedColumns::new(&x), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, bench_training);
criterion_main!(benches);
