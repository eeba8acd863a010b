//! Reference predictors answering the same queries as the in-context model:
//! minimal-norm least squares, 3-nearest-neighbors, the support-mean
//! predictor, and small fresh models trained with Adam on the support set.
//!
//! Baselines run in f64 (support images are promoted from the f32 pipeline)
//! and are pure functions of (support, query, seed).

use crate::error::{Error, Result};
use crate::linalg::pinv_solve;
use crate::nn::{Linear, ParamId, ParamStore, PosEmbedding, VitEncoder};
use crate::rng::Rng;
use crate::tasks::IMAGE_PIXELS;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::train::{plain_mse, AdamState, adam_step};
use crate::IMAGE_SIDE;

/// Singular values below this fraction of the largest are treated as zero
/// in the least-squares solve.
pub const RANK_RCOND: f64 = 1e-8;

/// Labeled context pairs for one query: flattened masked images and their
/// target values.
pub struct SupportSet {
    /// [m, 64]; rows carry zeros outside the d x d mask footprint.
    pub xs: Tensor<f64>,
    pub ys: Vec<f64>,
    pub d: usize,
}

impl SupportSet {
    pub fn new(xs: Tensor<f64>, ys: Vec<f64>, d: usize) -> Self {
        let m = ys.len();
        assert!(m > 0, "SupportSet::new: use SupportSet::empty for m = 0");
        assert_eq!(
            xs.shape(),
            &[m, IMAGE_PIXELS],
            "support xs shape {:?} does not match {m} rows of {IMAGE_PIXELS}",
            xs.shape()
        );
        SupportSet { xs, ys, d }
    }

    /// Empty support (m = 0).
    pub fn empty(d: usize) -> Self {
        SupportSet { xs: Tensor::zeros(&[1, IMAGE_PIXELS]), ys: Vec::new(), d }
    }

    pub fn from_pairs(pairs: &[(&[f64], f64)], d: usize) -> Self {
        if pairs.is_empty() {
            return Self::empty(d);
        }
        let mut xs = Vec::with_capacity(pairs.len() * IMAGE_PIXELS);
        let mut ys = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            assert_eq!(x.len(), IMAGE_PIXELS);
            xs.extend_from_slice(x);
            ys.push(*y);
        }
        SupportSet { xs: Tensor::new(&[pairs.len(), IMAGE_PIXELS], xs), ys, d }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
}

/// Baseline output; `empty_support` marks the m = 0 convention (value 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub empty_support: bool,
}

impl Prediction {
    fn of(value: f64) -> Self {
        Prediction { value, empty_support: false }
    }

    fn empty() -> Self {
        Prediction { value: 0.0, empty_support: true }
    }
}

/// Minimal-norm least squares: fit w on the support, answer wᵀ query.
pub fn least_squares(s: &SupportSet, query: &[f64]) -> Prediction {
    assert_eq!(query.len(), IMAGE_PIXELS, "least_squares: query must have {IMAGE_PIXELS} entries");
    if s.is_empty() {
        return Prediction::empty();
    }
    let w = pinv_solve(&s.xs, &s.ys, RANK_RCOND);
    Prediction::of(w.iter().zip(query).map(|(a, b)| a * b).sum())
}

/// Mean label of the min(3, m) nearest support points by Euclidean
/// distance; ties broken toward the lower support index.
pub fn knn3(s: &SupportSet, query: &[f64]) -> Prediction {
    assert_eq!(query.len(), IMAGE_PIXELS, "knn3: query must have {IMAGE_PIXELS} entries");
    if s.is_empty() {
        return Prediction::empty();
    }
    let m = s.len();
    let mut order: Vec<(f64, usize)> = (0..m)
        .map(|i| {
            let row = &s.xs.data()[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS];
            let d2: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let k = m.min(3);
    Prediction::of(order[..k].iter().map(|&(_, i)| s.ys[i]).sum::<f64>() / k as f64)
}

/// Mean of the support labels; 0 on empty support.
pub fn mean_predict(s: &SupportSet) -> f64 {
    if s.is_empty() {
        0.0
    } else {
        s.ys.iter().sum::<f64>() / s.len() as f64
    }
}

// ---------------------------------------------------------------------------
// gradient-descent-trained fresh models
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreshModelKind {
    Mlp,
    Cnn,
    Vit,
}

impl FreshModelKind {
    pub fn name(self) -> &'static str {
        match self {
            FreshModelKind::Mlp => "mlp",
            FreshModelKind::Cnn => "cnn",
            FreshModelKind::Vit => "vit",
        }
    }
}

enum FreshArch {
    /// 64 -> 64 -> 64 -> 1, relu.
    Mlp { l1: Linear, l2: Linear, l3: Linear },
    /// Trainable 2x2 stride-2 kernel + relu + linear readout of the 16
    /// features (the same geometry as the two-layer CNN target class).
    Cnn { kernel: ParamId, head: Linear },
    /// 2-layer, 2-head, patch-4 ViT at width 32 with a scalar head.
    Vit { vit: VitEncoder, head: Linear },
}

/// A frozen predictor produced by [`gd_train_fresh`].
pub struct FreshPredictor {
    pub kind: FreshModelKind,
    store: ParamStore<f32>,
    arch: FreshArch,
    pub final_train_mse: f64,
}

impl FreshArch {
    fn new(kind: FreshModelKind, store: &mut ParamStore<f32>, rng: &mut Rng) -> Self {
        match kind {
            FreshModelKind::Mlp => FreshArch::Mlp {
                l1: Linear::new(store, rng, "fresh_mlp.l1", IMAGE_PIXELS, 64),
                l2: Linear::new(store, rng, "fresh_mlp.l2", 64, 64),
                l3: Linear::new(store, rng, "fresh_mlp.l3", 64, 1),
            },
            FreshModelKind::Cnn => FreshArch::Cnn {
                kernel: store.register_fan_in("fresh_cnn.kernel", &[1, 1, 2, 2], 4, rng),
                head: Linear::new(store, rng, "fresh_cnn.head", 16, 1),
            },
            FreshModelKind::Vit => FreshArch::Vit {
                vit: VitEncoder::new(store, rng, "fresh_vit", 2, 2, 4, PosEmbedding::Learned, 32),
                head: Linear::new(store, rng, "fresh_vit.head", 32, 1),
            },
        }
    }

    /// xs: [m, 64] -> predictions [m, 1].
    fn forward(&self, g: &mut Graph<f32>, store: &ParamStore<f32>, xs: Var, m: usize) -> Var {
        match self {
            FreshArch::Mlp { l1, l2, l3 } => {
                let h = l1.forward(g, store, xs);
                let h = g.relu(h);
                let h = l2.forward(g, store, h);
                let h = g.relu(h);
                l3.forward(g, store, h)
            }
            FreshArch::Cnn { kernel, head } => {
                let img = g.reshape(xs, &[m, 1, IMAGE_SIDE, IMAGE_SIDE]);
                let k = store.var(g, *kernel);
                let conv = g.conv2d(img, k, 2, 0);
                let act = g.relu(conv);
                let flat = g.reshape(act, &[m, 16]);
                head.forward(g, store, flat)
            }
            FreshArch::Vit { vit, head } => {
                let img = g.reshape(xs, &[m, 1, IMAGE_SIDE, IMAGE_SIDE]);
                let emb = vit.forward(g, store, img);
                head.forward(g, store, emb)
            }
        }
    }
}

impl FreshPredictor {
    pub fn predict(&self, query: &[f64]) -> f64 {
        assert_eq!(query.len(), IMAGE_PIXELS);
        let xs = Tensor::new(&[1, IMAGE_PIXELS], query.iter().map(|&v| v as f32).collect());
        let mut g = Graph::new();
        let x = g.constant(xs);
        let out = self.arch.forward(&mut g, &self.store, x, 1);
        g.value(out).data()[0] as f64
    }
}

/// Train a randomly initialized model of the given kind on the support set
/// with full-batch Adam on plain MSE. Deterministic per seed.
pub fn gd_train_fresh(
    kind: FreshModelKind,
    s: &SupportSet,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<FreshPredictor> {
    assert!(!s.is_empty(), "gd_train_fresh: support set must be non-empty");
    let m = s.len();
    let mut rng = Rng::seed_from(seed);
    let mut store = ParamStore::new();
    let arch = FreshArch::new(kind, &mut store, &mut rng);
    let mut adam = AdamState::new(&store, lr);

    let xs32 = Tensor::new(
        &[m, IMAGE_PIXELS],
        s.xs.data().iter().map(|&v| v as f32).collect(),
    );
    let targets = Tensor::new(&[m, 1], s.ys.iter().map(|&v| v as f32).collect());

    let mut final_mse = f64::INFINITY;
    for step in 0..steps {
        let mut g = Graph::new();
        let x = g.constant(xs32.clone());
        let preds = arch.forward(&mut g, &store, x, m);
        let loss = plain_mse(&mut g, preds, &targets);
        let loss_v = g.value(loss).data()[0] as f64;
        if !loss_v.is_finite() {
            return Err(Error::Train(format!(
                "fresh {} model diverged at step {step}",
                kind.name()
            )));
        }
        final_mse = loss_v;
        g.backward(loss);
        store.harvest_grads(&g);
        adam_step(&mut store, &mut adam);
    }
    Ok(FreshPredictor { kind, store, arch, final_train_mse: final_mse })
}
