//! Evaluation harness: error vs. context length for the in-context model
//! and every baseline, over a shared stream of sampled tasks.
//!
//! Protocol: each task samples a fresh target, draws a prompt of n pairs
//! from the held-out image split, and for every prefix length m in 1..n-1
//! scores the model's prediction for pair m+1 against each baseline given
//! the first m pairs as support and x_{m+1} as query. Per-task seeds are
//! derived from the master seed, so the parallel fan-out is
//! seed-deterministic and baselines see exactly the prompts the model saw.

use crate::baselines::{
    gd_train_fresh, knn3, least_squares, mean_predict, FreshModelKind, SupportSet,
};
use crate::data::ImagePool;
use crate::nn::{IclModel, ParamStore};
use crate::par;
use crate::rng::{derive_seed, derive_seed2, Rng};
use crate::tasks::{
    mask_image, sample_target, FunctionClass, PromptBatch, TargetFunction, IMAGE_PIXELS,
};
use crate::tensor::graph::Graph;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub context_len: usize,
    pub model_mse: Option<f64>,
    pub ls_mse: f64,
    pub knn_mse: f64,
    pub mean_mse: f64,
    pub gd_mlp_mse: Option<f64>,
    pub gd_cnn_mse: Option<f64>,
    pub gd_vit_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub class: FunctionClass,
    pub n_tasks: usize,
    pub seed: u64,
    pub config_digest: u64,
    pub d: usize,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn has_gd_columns(&self) -> bool {
        self.rows.iter().any(|r| r.gd_mlp_mse.is_some())
    }

    pub fn row_at(&self, context_len: usize) -> &EvalRow {
        self.rows
            .iter()
            .find(|r| r.context_len == context_len)
            .unwrap_or_else(|| panic!("no row with context_len {context_len}"))
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub n_tasks: usize,
    pub seed: u64,
    /// Train fresh MLP/CNN/ViT baselines at the subsampled context lengths
    /// {1, n/4, n/2, n-1}. Costs gd_steps optimizer steps per (task, m).
    pub gd: bool,
    pub gd_steps: usize,
    pub gd_lr: f64,
    /// Model forward batch size during evaluation.
    pub chunk: usize,
    pub experiment: String,
    pub config_digest: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_tasks: 200,
            seed: 42,
            gd: false,
            gd_steps: 5000,
            gd_lr: 1e-3,
            chunk: 32,
            experiment: "none".into(),
            config_digest: 0,
        }
    }
}

/// One evaluation task: `n` masked eval-split images and their target
/// values. Exposed so tests can recompute columns independently.
pub fn build_eval_task(
    task_seed: u64,
    sampler: &(dyn Fn(u64) -> TargetFunction<f32> + Sync),
    eval_images: &[Tensor<f32>],
    d: usize,
    n: usize,
) -> (Tensor<f32>, Vec<f32>) {
    let mut rng = Rng::seed_from(task_seed);
    let target = sampler(rng.next_u64());
    assert!(
        eval_images.len() >= n,
        "evaluate: prompt needs {n} images but the eval split has {}",
        eval_images.len()
    );
    let picks = rng.sample_distinct(eval_images.len(), n);
    let mut images = Tensor::zeros(&[n, 1, 8, 8]);
    for (i, &p) in picks.iter().enumerate() {
        let masked = mask_image(&eval_images[p], d);
        images.data_mut()[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
            .copy_from_slice(masked.data());
    }
    let values = target.eval_batch(&images);
    (images, values)
}

/// Context lengths at which the gradient-descent baselines run.
pub fn gd_context_lengths(n: usize) -> Vec<usize> {
    let mut ms = vec![1, n.div_ceil(4), n.div_ceil(2), n - 1];
    ms.sort_unstable();
    ms.dedup();
    ms.retain(|&m| (1..n).contains(&m));
    ms
}

/// Evaluate `model` (or baselines alone when `model` is None) on targets
/// drawn by `sampler`.
pub fn evaluate_with_sampler(
    model: Option<(&IclModel, &ParamStore<f32>)>,
    sampler: &(dyn Fn(u64) -> TargetFunction<f32> + Sync),
    class: FunctionClass,
    d: usize,
    n: usize,
    pool: &ImagePool,
    opts: &EvalOptions,
) -> EvalReport {
    assert!(n >= 2, "evaluate: need n >= 2, got {n}");
    assert!(opts.n_tasks >= 1, "evaluate: need at least one task");
    let eval_images = pool.eval_images();

    // Phase 1: per-task prompts, independent derived streams.
    let tasks: Vec<(Tensor<f32>, Vec<f32>)> = par::map_indexed(opts.n_tasks, |t| {
        build_eval_task(derive_seed(opts.seed, t as u64), sampler, &eval_images, d, n)
    });

    // Phase 2: model predictions, batched.
    let preds: Option<Vec<Vec<f32>>> = model.map(|(model, store)| {
        let mut all = Vec::with_capacity(opts.n_tasks);
        for chunk in tasks.chunks(opts.chunk.max(1)) {
            let b = chunk.len();
            let mut batch = PromptBatch::<f32>::empty(b, n, n, d);
            for (r, (images, values)) in chunk.iter().enumerate() {
                batch.images.data_mut()[r * n * IMAGE_PIXELS..(r + 1) * n * IMAGE_PIXELS]
                    .copy_from_slice(images.data());
                batch.values.data_mut()[r * n..(r + 1) * n].copy_from_slice(values);
            }
            let mut g = Graph::new();
            let out = model.forward(&mut g, store, &batch);
            for r in 0..b {
                all.push(g.value(out).data()[r * n..(r + 1) * n].to_vec());
            }
        }
        all
    });

    // Phase 3: per-task, per-prefix squared errors.
    let gd_ms = if opts.gd { gd_context_lengths(n) } else { Vec::new() };
    #[derive(Default)]
    struct TaskErrors {
        model: Vec<f64>,
        ls: Vec<f64>,
        knn: Vec<f64>,
        mean: Vec<f64>,
        gd: Vec<[f64; 3]>,
    }

    let errors: Vec<TaskErrors> = {
        let tasks = &tasks;
        let preds = &preds;
        let gd_ms = &gd_ms;
        par::map_indexed(opts.n_tasks, move |t| {
            let (images, values) = &tasks[t];
            let xs64: Vec<f64> = images.data().iter().map(|&v| v as f64).collect();
            let ys64: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let mut te = TaskErrors::default();
            for m in 1..n {
                let query = &xs64[m * IMAGE_PIXELS..(m + 1) * IMAGE_PIXELS];
                let truth = ys64[m];
                let support = SupportSet::new(
                    Tensor::new(&[m, IMAGE_PIXELS], xs64[..m * IMAGE_PIXELS].to_vec()),
                    ys64[..m].to_vec(),
                    d,
                );
                te.ls.push((least_squares(&support, query).value - truth).powi(2));
                te.knn.push((knn3(&support, query).value - truth).powi(2));
                te.mean.push((mean_predict(&support) - truth).powi(2));
                if let Some(p) = preds {
                    te.model.push((p[t][m] as f64 - truth).powi(2));
                }
                if gd_ms.contains(&m) {
                    let task_seed = derive_seed(opts.seed, t as u64);
                    let mut errs = [0.0f64; 3];
                    for (ki, kind) in
                        [FreshModelKind::Mlp, FreshModelKind::Cnn, FreshModelKind::Vit]
                            .iter()
                            .enumerate()
                    {
                        let seed = derive_seed2(task_seed, 0xFD ^ ki as u64, m as u64);
                        let pred = gd_train_fresh(*kind, &support, opts.gd_steps, opts.gd_lr, seed)
                            .map(|p| p.predict(query))
                            .unwrap_or(f64::INFINITY);
                        errs[ki] = (pred - truth).powi(2);
                    }
                    te.gd.push(errs);
                }
            }
            te
        })
    };

    // Fixed-order reduction across tasks.
    let rows: Vec<EvalRow> = (1..n)
        .map(|m| {
            let idx = m - 1;
            let avg = |f: &dyn Fn(&TaskErrors) -> f64| -> f64 {
                errors.iter().map(f).sum::<f64>() / opts.n_tasks as f64
            };
            let gd_idx = gd_ms.iter().position(|&gm| gm == m);
            let gd_avg = |k: usize| -> Option<f64> {
                gd_idx.map(|gi| errors.iter().map(|te| te.gd[gi][k]).sum::<f64>() / opts.n_tasks as f64)
            };
            let row = EvalRow {
                context_len: m,
                model_mse: preds.as_ref().map(|_| avg(&|te: &TaskErrors| te.model[idx])),
                ls_mse: avg(&|te: &TaskErrors| te.ls[idx]),
                knn_mse: avg(&|te: &TaskErrors| te.knn[idx]),
                mean_mse: avg(&|te: &TaskErrors| te.mean[idx]),
                gd_mlp_mse: gd_avg(0),
                gd_cnn_mse: gd_avg(1),
                gd_vit_mse: gd_avg(2),
            };
            debug_assert!(row.ls_mse.is_finite() && row.knn_mse.is_finite() && row.mean_mse.is_finite());
            row
        })
        .collect();

    EvalReport {
        experiment: opts.experiment.clone(),
        class,
        n_tasks: opts.n_tasks,
        seed: opts.seed,
        config_digest: opts.config_digest,
        d,
        rows,
    }
}

/// Standard in-distribution evaluation: sample targets from `class`.
pub fn evaluate(
    model: &IclModel,
    store: &ParamStore<f32>,
    class: FunctionClass,
    d: usize,
    n: usize,
    pool: &ImagePool,
    opts: &EvalOptions,
) -> EvalReport {
    let sampler = move |seed: u64| sample_target::<f32>(class, seed);
    evaluate_with_sampler(Some((model, store)), &sampler, class, d, n, pool, opts)
}

/// Out-of-distribution shift: the same protocol with kernel-composed linear
/// targets, for models trained on the plain linear class.
pub fn evaluate_ood(
    model: &IclModel,
    store: &ParamStore<f32>,
    d: usize,
    n: usize,
    pool: &ImagePool,
    opts: &EvalOptions,
) -> EvalReport {
    evaluate(model, store, FunctionClass::ConvLinear, d, n, pool, opts)
}

/// Baseline columns only (no trained model required).
pub fn baselines_only(
    class: FunctionClass,
    d: usize,
    n: usize,
    pool: &ImagePool,
    opts: &EvalOptions,
) -> EvalReport {
    let sampler = move |seed: u64| sample_target::<f32>(class, seed);
    evaluate_with_sampler(None, &sampler, class, d, n, pool, opts)
}
