//! Training: the context-weighted MSE objective, Adam, and the
//! curriculum-driven loop that jointly updates encoder and decoder.
//!
//! Determinism contract: a run is a pure function of its `TrainConfig`.
//! Per-(step, row) RNG streams are derived from the seed, so prompt
//! construction can fan out across workers, and resuming from a checkpoint
//! replays the exact stream an uninterrupted run would have seen.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::data::ImagePool;
use crate::error::{Error, Result};
use crate::nn::{DecoderConfig, EncoderConfig, IclModel, IclModelConfig, ParamStore, PosEmbedding};
use crate::par;
use crate::rng::{derive_seed, derive_seed2, Rng};
use crate::tasks::{sample_target, Curriculum, FunctionClass, PromptBatch};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Per-position loss weights (2k/n)^2 for k = 1..n, zero at padding slots
/// beyond n. The final position always weighs 4; the second half of the
/// prompt dominates the objective.
pub fn context_weights<S: Scalar>(n: usize, width: usize) -> Vec<S> {
    assert!(n >= 1 && n <= width, "context_weights: need 1 <= n <= width, got n={n}, width={width}");
    (0..width)
        .map(|i| {
            if i < n {
                let r = 2.0 * (i + 1) as f64 / n as f64;
                S::from_f64(r * r)
            } else {
                S::ZERO
            }
        })
        .collect()
}

/// Mean over batch and the n valid positions of w_k * (pred - target)^2,
/// with an explicit weight row (shared across the batch).
pub fn mse_with_weights<S: Scalar>(
    g: &mut Graph<S>,
    preds: Var,
    targets: &Tensor<S>,
    weights_row: &[S],
    n: usize,
) -> Var {
    let shape = g.value(preds).shape().to_vec();
    assert_eq!(
        &shape,
        targets.shape(),
        "loss: prediction shape {:?} != target shape {:?}",
        shape,
        targets.shape()
    );
    let (batch, width) = (shape[0], shape[1]);
    assert_eq!(weights_row.len(), width, "loss: weight row width mismatch");
    let mut tiled = Vec::with_capacity(batch * width);
    for _ in 0..batch {
        tiled.extend_from_slice(weights_row);
    }
    let t = g.constant(targets.clone());
    let w = g.constant(Tensor::new(&[batch, width], tiled));
    let diff = g.sub(preds, t);
    let sq = g.mul(diff, diff);
    let weighted = g.mul(sq, w);
    let total = g.sum_all(weighted);
    g.scale(total, S::from_f64(1.0 / (batch * n) as f64))
}

/// The training objective: context-ramped weights over the first n
/// positions; positions past n (padding) contribute exactly zero loss and
/// zero gradient.
pub fn weighted_mse<S: Scalar>(g: &mut Graph<S>, preds: Var, targets: &Tensor<S>, n: usize) -> Var {
    let width = g.value(preds).shape()[1];
    let weights = context_weights::<S>(n, width);
    mse_with_weights(g, preds, targets, &weights, n)
}

/// Plain MSE over all positions (the unit-weight hook and the objective for
/// the gradient-descent baselines).
pub fn plain_mse<S: Scalar>(g: &mut Graph<S>, preds: Var, targets: &Tensor<S>) -> Var {
    let width = g.value(preds).shape()[1];
    let weights = vec![S::ONE; width];
    mse_with_weights(g, preds, targets, &weights, width)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct AdamState<S: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let m = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        let v = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }
}

/// One bias-corrected Adam update over every trainable parameter; gradients
/// are zeroed afterwards. Panics if a trainable parameter never received a
/// gradient (a mis-wired model).
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, state: &mut AdamState<S>) {
    adam_step_scaled(store, state, 1.0)
}

/// Adam update with a step-level learning-rate multiplier (warmup).
pub fn adam_step_scaled<S: Scalar>(store: &mut ParamStore<S>, state: &mut AdamState<S>, lr_scale: f64) {
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let lr = S::from_f64(state.lr * lr_scale);
    let b1 = S::from_f64(state.beta1);
    let b2 = S::from_f64(state.beta2);
    let one_m_b1 = S::from_f64(1.0 - state.beta1);
    let one_m_b2 = S::from_f64(1.0 - state.beta2);
    let inv_bc1 = S::from_f64(1.0 / bc1);
    let inv_bc2 = S::from_f64(1.0 / bc2);
    let eps = S::from_f64(state.eps);

    for id in store.ids().collect::<Vec<_>>() {
        let idx = id.index();
        if !store.get(id).trainable {
            continue;
        }
        assert!(
            store.get(id).grad_present,
            "adam_step: parameter '{}' has no gradient; run backward and harvest_grads first",
            store.get(id).name
        );
        let p = store.get_mut(id);
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        for ((pv, gv), (mv, vv)) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = b1 * *mv + one_m_b1 * *gv;
            *vv = b2 * *vv + one_m_b2 * *gv * *gv;
            let mhat = *mv * inv_bc1;
            let vhat = *vv * inv_bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    store.zero_grads();
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    E1,
    E2,
    E3,
    E4,
}

impl Experiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "e1" => Some(Experiment::E1),
            "e2" => Some(Experiment::E2),
            "e3" => Some(Experiment::E3),
            "e4" => Some(Experiment::E4),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::E1 => "e1",
            Experiment::E2 => "e2",
            Experiment::E3 => "e3",
            Experiment::E4 => "e4",
        }
    }

    /// Function class the model is trained on.
    pub fn target_class(self) -> FunctionClass {
        match self {
            Experiment::E1 | Experiment::E2 => FunctionClass::Linear,
            Experiment::E3 => FunctionClass::TwoLayerCnn,
            Experiment::E4 => FunctionClass::FrozenVit,
        }
    }

    pub fn default_encoder(self) -> EncoderConfig {
        match self {
            Experiment::E1 => EncoderConfig::Cnn { n_layers: 8, channels: 32, kernel: 3 },
            Experiment::E2 | Experiment::E3 => {
                EncoderConfig::Vit { n_layers: 4, n_heads: 8, patch_size: 4, pos: PosEmbedding::Learned }
            }
            Experiment::E4 => {
                EncoderConfig::Vit { n_layers: 12, n_heads: 8, patch_size: 4, pos: PosEmbedding::Learned }
            }
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Experiment::E4 => 1e-5,
            _ => 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub experiment: Experiment,
    pub lr: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub curriculum: Curriculum,
    pub seed: u64,
    /// Emit a checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
    /// Linear learning-rate warmup over this many steps (0 = none).
    pub lr_warmup: usize,
}

impl TrainConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        TrainConfig {
            experiment,
            lr: experiment.default_lr(),
            batch_size: 64,
            total_steps: 50_000,
            curriculum: Curriculum::default(),
            seed: 42,
            checkpoint_every: 0,
            decoder: DecoderConfig::default(),
            encoder: experiment.default_encoder(),
            grad_clip: None,
            lr_warmup: 0,
        }
    }

    /// The scaled-down end-to-end run: block size pinned at d=2 (n=11),
    /// 3-layer/64-dim/4-head decoder, 2-layer/8-channel CNN encoder,
    /// lr 1e-4, 10k steps.
    pub fn e1_tiny() -> Self {
        TrainConfig {
            experiment: Experiment::E1,
            lr: 1e-4,
            batch_size: 16,
            total_steps: 10_000,
            curriculum: Curriculum { k_mult: 5, step_per_stage: 5000, fixed_d: Some(2) },
            seed: 42,
            checkpoint_every: 0,
            decoder: DecoderConfig { embed_dim: 64, n_layers: 3, n_heads: 4, max_seq_len: 82 },
            encoder: EncoderConfig::Cnn { n_layers: 2, channels: 8, kernel: 3 },
            grad_clip: None,
            lr_warmup: 0,
        }
    }

    pub fn model_config(&self) -> IclModelConfig {
        IclModelConfig { decoder: self.decoder.clone(), encoder: self.encoder.clone() }
    }

    /// Canonical flat key=value form; also the checkpoint's embedded config
    /// and the CLI config-file syntax.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        push("experiment", self.experiment.name().to_string());
        push("lr", format!("{}", self.lr));
        push("batch_size", format!("{}", self.batch_size));
        push("total_steps", format!("{}", self.total_steps));
        push("k_mult", format!("{}", self.curriculum.k_mult));
        push("step_per_stage", format!("{}", self.curriculum.step_per_stage));
        push(
            "fixed_d",
            self.curriculum.fixed_d.map_or("none".to_string(), |d| format!("{d}")),
        );
        push("seed", format!("{}", self.seed));
        push("checkpoint_every", format!("{}", self.checkpoint_every));
        push("decoder_embed", format!("{}", self.decoder.embed_dim));
        push("decoder_layers", format!("{}", self.decoder.n_layers));
        push("decoder_heads", format!("{}", self.decoder.n_heads));
        push("max_seq_len", format!("{}", self.decoder.max_seq_len));
        match &self.encoder {
            EncoderConfig::Cnn { n_layers, channels, kernel } => {
                push("encoder", "cnn".to_string());
                push("encoder_layers", format!("{n_layers}"));
                push("encoder_channels", format!("{channels}"));
                push("encoder_kernel", format!("{kernel}"));
            }
            EncoderConfig::Vit { n_layers, n_heads, patch_size, pos } => {
                push("encoder", "vit".to_string());
                push("encoder_layers", format!("{n_layers}"));
                push("encoder_heads", format!("{n_heads}"));
                push("patch_size", format!("{patch_size}"));
                push(
                    "pos_embedding",
                    match pos {
                        PosEmbedding::Learned => "learned".to_string(),
                        PosEmbedding::Sinusoidal => "sinusoidal".to_string(),
                    },
                );
            }
        }
        push("grad_clip", self.grad_clip.map_or("none".to_string(), |c| format!("{c}")));
        push("lr_warmup", format!("{}", self.lr_warmup));
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        // Resolve the experiment first so its lr/encoder defaults seed the
        // remaining keys.
        let experiment = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("experiment")?.trim().strip_prefix('=').map(str::trim))
            .next_back()
            .map(|v| Experiment::parse(v).ok_or_else(|| Error::Config(format!("invalid value for 'experiment': '{v}'"))))
            .transpose()?;
        let mut cfg = TrainConfig::for_experiment(experiment.unwrap_or(Experiment::E1));
        let mut encoder_kind: Option<String> = None;
        let mut enc_layers = 8usize;
        let mut enc_channels = 32usize;
        let mut enc_kernel = 3usize;
        let mut enc_heads = 8usize;
        let mut patch_size = 4usize;
        let mut pos = PosEmbedding::Learned;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |k: &str, v: &str| Error::Config(format!("invalid value for '{k}': '{v}'"));
            match k {
                "experiment" => {
                    cfg.experiment =
                        Experiment::parse(v).ok_or_else(|| bad("experiment", v))?;
                }
                "lr" => cfg.lr = v.parse().map_err(|_| bad(k, v))?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad(k, v))?,
                "total_steps" => cfg.total_steps = v.parse().map_err(|_| bad(k, v))?,
                "k_mult" => cfg.curriculum.k_mult = v.parse().map_err(|_| bad(k, v))?,
                "step_per_stage" => {
                    cfg.curriculum.step_per_stage = v.parse().map_err(|_| bad(k, v))?
                }
                "fixed_d" => {
                    cfg.curriculum.fixed_d = if v == "none" {
                        None
                    } else {
                        Some(v.parse().map_err(|_| bad(k, v))?)
                    }
                }
                "seed" => cfg.seed = v.parse().map_err(|_| bad(k, v))?,
                "checkpoint_every" => cfg.checkpoint_every = v.parse().map_err(|_| bad(k, v))?,
                "decoder_embed" => cfg.decoder.embed_dim = v.parse().map_err(|_| bad(k, v))?,
                "decoder_layers" => cfg.decoder.n_layers = v.parse().map_err(|_| bad(k, v))?,
                "decoder_heads" => cfg.decoder.n_heads = v.parse().map_err(|_| bad(k, v))?,
                "max_seq_len" => cfg.decoder.max_seq_len = v.parse().map_err(|_| bad(k, v))?,
                "encoder" => encoder_kind = Some(v.to_string()),
                "encoder_layers" => enc_layers = v.parse().map_err(|_| bad(k, v))?,
                "encoder_channels" => enc_channels = v.parse().map_err(|_| bad(k, v))?,
                "encoder_kernel" => enc_kernel = v.parse().map_err(|_| bad(k, v))?,
                "encoder_heads" => enc_heads = v.parse().map_err(|_| bad(k, v))?,
                "patch_size" => patch_size = v.parse().map_err(|_| bad(k, v))?,
                "pos_embedding" => {
                    pos = match v {
                        "learned" => PosEmbedding::Learned,
                        "sinusoidal" => PosEmbedding::Sinusoidal,
                        _ => return Err(bad(k, v)),
                    }
                }
                "grad_clip" => {
                    cfg.grad_clip =
                        if v == "none" { None } else { Some(v.parse().map_err(|_| bad(k, v))?) }
                }
                "lr_warmup" => cfg.lr_warmup = v.parse().map_err(|_| bad(k, v))?,
                _ => return Err(Error::Config(format!("unknown config key '{k}'"))),
            }
        }

        match encoder_kind.as_deref() {
            Some("cnn") => {
                cfg.encoder = EncoderConfig::Cnn {
                    n_layers: enc_layers,
                    channels: enc_channels,
                    kernel: enc_kernel,
                }
            }
            Some("vit") => {
                cfg.encoder = EncoderConfig::Vit {
                    n_layers: enc_layers,
                    n_heads: enc_heads,
                    patch_size,
                    pos,
                }
            }
            Some(other) => {
                return Err(Error::Config(format!("invalid value for 'encoder': '{other}'")))
            }
            None => {}
        }
        Ok(cfg)
    }

    /// FNV-1a digest of the canonical config text.
    pub fn digest(&self) -> u64 {
        fnv1a(self.to_kv().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// ---------------------------------------------------------------------------
// loop
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub d: u32,
    pub n: u32,
    pub loss: f32,
}

/// Serialize loss history as CSV with columns step, d, n, loss.
pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,d,n,loss\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.d, r.n, r.loss));
    }
    s
}

// Stream tags for seed derivation.
const STREAM_INIT: u64 = 0x01;
const STREAM_ROW: u64 = 0x02;

/// Build the model for a config (deterministic in the seed).
pub fn build_model(cfg: &TrainConfig) -> (IclModel, ParamStore<f32>) {
    let mut rng = Rng::seed_from(derive_seed(cfg.seed, STREAM_INIT));
    let mut store = ParamStore::new();
    let model = IclModel::new(&cfg.model_config(), &mut store, &mut rng);
    (model, store)
}

/// Construct the prompt batch for one training step. Rows are filled from
/// independent derived streams, so this is safe to fan out and identical
/// either way.
pub(crate) fn training_batch(
    cfg: &TrainConfig,
    train_images: &[Tensor<f32>],
    step: usize,
) -> (PromptBatch<f32>, Tensor<f32>) {
    let state = cfg.curriculum.at(step);
    let (d, n) = (state.d, state.n);
    let n_max = cfg.curriculum.n_max();
    let b = cfg.batch_size;
    let class = cfg.experiment.target_class();

    let rows: Vec<PromptBatch<f32>> = {
        let mut rows = vec![PromptBatch::empty(1, n, n_max, d); b];
        par::for_chunks_mut(&mut rows, 1, |row, slot| {
            let mut rng =
                Rng::seed_from(derive_seed2(cfg.seed ^ STREAM_ROW, step as u64, row as u64));
            let target = sample_target::<f32>(class, rng.next_u64());
            slot[0].fill_row(0, train_images, &target, &mut rng);
        });
        rows
    };

    let mut batch = PromptBatch::empty(b, n, n_max, d);
    let px = crate::tasks::IMAGE_PIXELS;
    for (r, row) in rows.iter().enumerate() {
        batch.images.data_mut()[r * n_max * px..(r + 1) * n_max * px]
            .copy_from_slice(row.images.data());
        batch.values.data_mut()[r * n_max..(r + 1) * n_max].copy_from_slice(row.values.data());
    }
    let mut targets = Tensor::zeros(&[b, n]);
    for r in 0..b {
        for i in 0..n {
            targets.data_mut()[r * n + i] = batch.values.data()[r * n_max + i];
        }
    }
    (batch, targets)
}

/// One optimizer step; returns the loss.
fn train_step(
    cfg: &TrainConfig,
    model: &IclModel,
    store: &mut ParamStore<f32>,
    adam: &mut AdamState<f32>,
    train_images: &[Tensor<f32>],
    step: usize,
) -> Result<f32> {
    let (batch, targets) = training_batch(cfg, train_images, step);
    let mut g = Graph::new();
    let preds = model.forward(&mut g, store, &batch);
    let loss_var = weighted_mse(&mut g, preds, &targets, batch.n);
    let loss = g.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(Error::Train(format!(
            "loss became non-finite at step {step} (d={}, lr={})",
            batch.d, cfg.lr
        )));
    }
    g.backward(loss_var);
    store.harvest_grads(&g);

    if let Some(clip) = cfg.grad_clip {
        clip_global_norm(store, clip);
    }
    let lr_scale = if cfg.lr_warmup > 0 {
        ((step + 1) as f64 / cfg.lr_warmup as f64).min(1.0)
    } else {
        1.0
    };
    adam_step_scaled(store, adam, lr_scale);
    Ok(loss)
}

fn clip_global_norm(store: &mut ParamStore<f32>, clip: f64) {
    let mut sq = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        if !store.get(id).trainable {
            continue;
        }
        for &gv in store.get(id).grad.data() {
            sq += (gv as f64) * (gv as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > clip {
        let scale = (clip / norm) as f32;
        for id in store.ids().collect::<Vec<_>>() {
            for gv in store.get_mut(id).grad.data_mut() {
                *gv *= scale;
            }
        }
    }
}

/// Train from scratch. Emits intermediate checkpoints into `out_dir` when
/// `checkpoint_every` is set; the final state is returned (and also written
/// when `out_dir` is given by the caller).
pub fn train_loop(cfg: &TrainConfig, pool: &ImagePool, out_dir: Option<&Path>) -> Result<Checkpoint> {
    let (model, mut store) = build_model(cfg);
    let mut adam = AdamState::new(&store, cfg.lr);
    let history = Vec::new();
    run_steps(cfg, &model, &mut store, &mut adam, pool, 0, history, out_dir)
}

/// Continue a checkpointed run up to `total_steps` (which may exceed the
/// checkpoint config's original step budget). The seed stream continues
/// exactly where the uninterrupted run would be.
pub fn resume_training(
    ckpt: &Checkpoint,
    pool: &ImagePool,
    total_steps: usize,
    out_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let mut cfg = ckpt.config.clone();
    cfg.total_steps = total_steps;
    let (model, mut store, mut adam) = ckpt.restore_model()?;
    let history = ckpt.loss_history.clone();
    run_steps(&cfg, &model, &mut store, &mut adam, pool, ckpt.step, history, out_dir)
}

#[allow(clippy::too_many_arguments)]
fn run_steps(
    cfg: &TrainConfig,
    model: &IclModel,
    store: &mut ParamStore<f32>,
    adam: &mut AdamState<f32>,
    pool: &ImagePool,
    start_step: usize,
    mut history: Vec<LossRecord>,
    out_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let train_images = pool.train_images();
    let n_needed = cfg.curriculum.n_max();
    if train_images.len() < n_needed {
        return Err(Error::Data(format!(
            "training split has {} images but prompts need up to {n_needed}",
            train_images.len()
        )));
    }

    for step in start_step..cfg.total_steps {
        let state = cfg.curriculum.at(step);
        let loss = train_step(cfg, model, store, adam, &train_images, step)?;
        history.push(LossRecord {
            step: step as u64,
            d: state.d as u32,
            n: state.n as u32,
            loss,
        });
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_steps {
            if let Some(dir) = out_dir {
                let ckpt = Checkpoint::capture(cfg, store, adam, done, &history);
                ckpt.save(&dir.join(format!("checkpoint-step{done}.ckpt")))?;
            }
        }
    }
    Ok(Checkpoint::capture(cfg, store, adam, cfg.total_steps, &history))
}

/// Benchmark hook: expose one training-batch construction.
#[doc(hidden)]
pub fn training_batch_for_bench(
    cfg: &TrainConfig,
    train_images: &[Tensor<f32>],
    step: usize,
) -> (PromptBatch<f32>, Tensor<f32>) {
    training_batch(cfg, train_images, step)
}
