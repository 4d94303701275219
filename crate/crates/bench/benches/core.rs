use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hjcl_bench::Workload;
use hjcl_core::data::SynthSpec;
use hjcl_core::eval::{report, EvalOptions, EvalPair};
use hjcl_core::losses::{hilecon, instance_loss, ContrastiveBatch, LabelLossMode, LossOptions, Prefactor};
use hjcl_core::model::Predictor;
use hjcl_core::trainer::{build_batches, train_step, TrainConfig, TrainContext, TrainState};
use hjcl_core::{Graph, LabelVector, MetricContext, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SynthSpec {
    SynthSpec { train_docs: 400, ..SynthSpec::default() }
}

fn distance(c: &mut Criterion) {
    let w = Workload::new(&small_spec());
    let ctx = MetricContext::new(&w.taxonomy);
    let golds: Vec<&LabelVector> = w.train.iter().take(80).map(|d| &d.gold).collect();
    c.bench_function("rho/80x80 pairs", |b| {
        b.iter(|| {
            let mut total = 0.0;
            for x in &golds {
                for y in &golds {
                    total += ctx.rho(x, y).unwrap();
                }
            }
            black_box(total)
        })
    });
}

fn contrastive_losses(c: &mut Criterion) {
    let w = Workload::new(&small_spec());
    let ctx = MetricContext::new(&w.taxonomy);
    let n = w.taxonomy.len();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let golds: Vec<LabelVector> = w.train.iter().take(16).map(|d| d.gold.clone()).collect();
    let embeddings: Vec<Tensor> = (0..golds.len())
        .map(|_| Tensor::from_vec(n, 32, (0..n * 32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    c.bench_function("hilecon/16 docs forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let ids: Vec<_> = embeddings.iter().map(|e| g.param(e.clone())).collect();
            let batch = ContrastiveBatch::new(&ids, &golds).unwrap();
            let loss = hilecon(&mut g, &batch, 0.1, &ctx, LabelLossMode::Hilecon, Prefactor::Anchors).unwrap();
            g.backward(loss).unwrap();
            black_box(g.value(loss).item())
        })
    });
    c.bench_function("instance/16 docs forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let ids: Vec<_> = embeddings.iter().map(|e| g.param(e.clone())).collect();
            let batch = ContrastiveBatch::new(&ids, &golds).unwrap();
            let loss = instance_loss(&mut g, &batch, 0.1, &w.taxonomy, &LossOptions::default()).unwrap();
            g.backward(loss.value).unwrap();
            black_box(g.value(loss.value).item())
        })
    });
}

fn model(c: &mut Criterion) {
    let w = Workload::new(&small_spec());
    let mut predictor = Predictor::new(&w.params, &w.taxonomy).unwrap();
    let doc = &w.train[0];
    c.bench_function("predict/one document", |b| b.iter(|| black_box(predictor.predict(&doc.token_ids).unwrap())));

    let config = TrainConfig { batch_size: 16, ..TrainConfig::default() };
    let ctx = TrainContext::new(&w.taxonomy, &config);
    let batch = build_batches(&w.train, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap().batches.remove(0);
    let docs: Vec<_> = batch.iter().map(|&i| &w.train[i]).collect();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("16 documents", |b| {
        b.iter_batched(
            || (w.params.clone(), TrainState::new(&w.params, 1)),
            |(mut params, mut state)| black_box(train_step(&mut params, &docs, &ctx, &mut state).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let w = Workload::new(&small_spec());
    let n = w.taxonomy.len();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<EvalPair> = w
        .train
        .iter()
        .map(|d| EvalPair::new(d.gold.clone(), LabelVector::from_bits((0..n).map(|_| rng.gen_bool(0.2)).collect())))
        .collect();
    c.bench_function("metrics/report 400 documents", |b| {
        b.iter(|| black_box(report(&pairs, &w.taxonomy, EvalOptions::default()).unwrap()))
    });
}

criterion_group!(benches, distance, contrastive_losses, model, metrics);
criterion_main!(benches);
