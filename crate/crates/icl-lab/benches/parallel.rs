//! Parallel vs. sequential throughput for the data-parallel inner loops:
//! batched convolution, fused attention, a full training step, and the
//! evaluation fan-out. Both modes run the same fixed work partition and
//! produce bit-identical results; this suite measures what the rayon path
//! buys on the current machine.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use icl_lab::data::synthetic_pool;
use icl_lab::eval::{baselines_only, EvalOptions};
use icl_lab::nn::causal_mask;
use icl_lab::par::set_parallel;
use icl_lab::rng::Rng;
use icl_lab::tasks::FunctionClass;
use icl_lab::tensor::graph::Graph;
use icl_lab::tensor::{kernels, Tensor};
use icl_lab::train::{build_model, training_batch_for_bench, weighted_mse, TrainConfig};

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn bench_gemm(c: &mut Criterion) {
    let mut rng = Rng::seed_from(1);
    let a = Tensor::<f32>::randn(&[704, 256], 1.0, &mut rng);
    let b = Tensor::<f32>::randn(&[256, 256], 1.0, &mut rng);
    let mut group = c.benchmark_group("gemm_704x256x256");
    for (name, par) in modes() {
        group.bench_function(name, |bench| {
            set_parallel(par);
            bench.iter(|| black_box(kernels::matmul(&a, &b, false)));
            set_parallel(true);
        });
    }
    group.finish();
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = Rng::seed_from(2);
    let x = Tensor::<f32>::randn(&[176, 8, 8, 8], 1.0, &mut rng);
    let w = Tensor::<f32>::randn(&[8, 8, 3, 3], 1.0, &mut rng);
    let mut group = c.benchmark_group("conv2d_fwd_176x8x8x8");
    for (name, par) in modes() {
        group.bench_function(name, |bench| {
            set_parallel(par);
            bench.iter(|| black_box(kernels::conv2d_fwd(&x, &w, 1, 1)));
            set_parallel(true);
        });
    }
    group.finish();
}

fn bench_attention(c: &mut Criterion) {
    let mut rng = Rng::seed_from(3);
    let q = Tensor::<f32>::randn(&[704, 64], 1.0, &mut rng);
    let k = Tensor::<f32>::randn(&[704, 64], 1.0, &mut rng);
    let v = Tensor::<f32>::randn(&[704, 64], 1.0, &mut rng);
    let mask = causal_mask::<f32>(22);
    let mut group = c.benchmark_group("mha_fwd_b32_t22_h4");
    for (name, par) in modes() {
        group.bench_function(name, |bench| {
            set_parallel(par);
            bench.iter(|| black_box(kernels::mha_fwd(&q, &k, &v, 32, 22, 4, &mask)));
            set_parallel(true);
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let cfg = TrainConfig::e1_tiny();
    let pool = synthetic_pool(512, 4);
    let (model, mut store) = build_model(&cfg);
    let imgs = pool.train_images();
    let (batch, targets) = training_batch_for_bench(&cfg, &imgs, 0);
    let mut group = c.benchmark_group("train_step_e1_tiny");
    group.sample_size(20);
    for (name, par) in modes() {
        group.bench_function(name, |bench| {
            set_parallel(par);
            bench.iter(|| {
                let mut g = Graph::new();
                let preds = model.forward(&mut g, &store, &batch);
                let loss = weighted_mse(&mut g, preds, &targets, batch.n);
                g.backward(loss);
                store.harvest_grads(&g);
                store.zero_grads();
            });
            set_parallel(true);
        });
    }
    group.finish();
}

fn bench_eval_fanout(c: &mut Criterion) {
    let pool = synthetic_pool(256, 5);
    let opts = EvalOptions { n_tasks: 16, ..Default::default() };
    let mut group = c.benchmark_group("baseline_eval_16_tasks_d2");
    group.sample_size(20);
    for (name, par) in modes() {
        group.bench_function(name, |bench| {
            set_parallel(par);
            bench.iter(|| black_box(baselines_only(FunctionClass::Linear, 2, 11, &pool, &opts)));
            set_parallel(true);
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_gemm,
    bench_conv2d,
    bench_attention,
    bench_train_step,
    bench_eval_fanout
);
criterion_main!(benches);
