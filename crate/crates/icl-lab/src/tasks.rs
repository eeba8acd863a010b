//! The data-generating process: target-function classes sampled per task,
//! the block-masking curriculum, and prompt construction.
//!
//! Four function classes over masked 8x8 images:
//! - `Linear`: f(x) = wᵀx with w ~ N(0, I_64)
//! - `ConvLinear`: f(x) = wᵀ(k * x) with an orthogonally-initialized 3x3
//!   kernel convolved at stride 1, pad 1 ("same"), reusing the 64-dim w
//! - `TwoLayerCnn`: f(x) = wᵀ relu(k * x) with k a 2x2 N(0,1) kernel at
//!   stride 2, no padding (8x8 -> 4x4 = 16 features), w ~ N(0, I_16)
//! - `FrozenVit`: fixed random scalar readout of a frozen 4-layer ViT with
//!   sinusoidal positional encodings
//!
//! All targets are frozen: they never receive gradients and evaluate
//! bit-identically on repeated calls.

use crate::linalg::random_orthogonal;
use crate::nn::{Linear, ParamStore, PosEmbedding, VitEncoder};
use crate::rng::Rng;
use crate::tensor::graph::Graph;
use crate::tensor::{kernels, Scalar, Tensor};
use crate::IMAGE_SIDE;

pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

// ---------------------------------------------------------------------------
// masking curriculum
// ---------------------------------------------------------------------------

/// Zero every pixel outside the top-left d x d block.
pub fn mask_image<S: Scalar>(x: &Tensor<S>, d: usize) -> Tensor<S> {
    assert_eq!(
        x.shape(),
        &[1, IMAGE_SIDE, IMAGE_SIDE],
        "mask_image: expected [1, {IMAGE_SIDE}, {IMAGE_SIDE}], got {:?}",
        x.shape()
    );
    let mut out = x.clone();
    mask_pixels_in_place(out.data_mut(), d);
    out
}

/// In-place variant over a flat 64-pixel slice.
pub fn mask_pixels_in_place<S: Scalar>(pixels: &mut [S], d: usize) {
    assert!(
        (1..=IMAGE_SIDE).contains(&d),
        "mask_image: block size d={d} outside [1, {IMAGE_SIDE}]"
    );
    assert_eq!(pixels.len(), IMAGE_PIXELS);
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            if row >= d || col >= d {
                pixels[row * IMAGE_SIDE + col] = S::ZERO;
            }
        }
    }
}

/// Block size and prompt length at a training step: d steps from 2 up to 8,
/// one increment every `step_per_stage` updates, with n = k_mult * d + 1.
pub fn curriculum_at(step: usize, k_mult: usize, step_per_stage: usize) -> (usize, usize) {
    assert!(k_mult > 0 && step_per_stage > 0, "curriculum_at: k_mult and step_per_stage must be positive");
    let d = (2 + step / step_per_stage).min(IMAGE_SIDE);
    (d, k_mult * d + 1)
}

/// Curriculum schedule; `fixed_d` pins the block size (used by the scaled-
/// down end-to-end runs).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Curriculum {
    pub k_mult: usize,
    pub step_per_stage: usize,
    pub fixed_d: Option<usize>,
}

impl Default for Curriculum {
    fn default() -> Self {
        Curriculum { k_mult: 5, step_per_stage: 5000, fixed_d: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumState {
    pub step: usize,
    pub d: usize,
    pub n: usize,
}

impl Curriculum {
    pub fn at(&self, step: usize) -> CurriculumState {
        let (d, n) = match self.fixed_d {
            Some(d) => {
                assert!((1..=IMAGE_SIDE).contains(&d), "curriculum: fixed d={d} outside [1, {IMAGE_SIDE}]");
                (d, self.k_mult * d + 1)
            }
            None => curriculum_at(step, self.k_mult, self.step_per_stage),
        };
        CurriculumState { step, d, n }
    }

    /// Largest prompt length this schedule can reach.
    pub fn n_max(&self) -> usize {
        match self.fixed_d {
            Some(d) => self.k_mult * d + 1,
            None => self.k_mult * IMAGE_SIDE + 1,
        }
    }
}

// ---------------------------------------------------------------------------
// target functions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionClass {
    Linear,
    ConvLinear,
    TwoLayerCnn,
    FrozenVit,
}

impl FunctionClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(FunctionClass::Linear),
            "convlinear" => Some(FunctionClass::ConvLinear),
            "cnn" => Some(FunctionClass::TwoLayerCnn),
            "vit" => Some(FunctionClass::FrozenVit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionClass::Linear => "linear",
            FunctionClass::ConvLinear => "convlinear",
            FunctionClass::TwoLayerCnn => "cnn",
            FunctionClass::FrozenVit => "vit",
        }
    }
}

pub enum TargetFunction<S: Scalar = f32> {
    Linear { w: Tensor<S> },
    ConvLinear { kernel: Tensor<S>, w: Tensor<S> },
    TwoLayerCnn { kernel: Tensor<S>, w: Tensor<S> },
    FrozenVit(Box<FrozenVitTarget<S>>),
}

/// Frozen 4-layer ViT (64-dim, 4 heads, patch 4, sinusoidal positions) with
/// a fixed random scalar readout of the mean-pooled tokens.
pub struct FrozenVitTarget<S: Scalar> {
    store: ParamStore<S>,
    vit: VitEncoder,
    readout: Linear,
}

impl<S: Scalar> FrozenVitTarget<S> {
    fn new(rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let vit = VitEncoder::new(&mut store, rng, "target_vit", 4, 4, 4, PosEmbedding::Sinusoidal, 64);
        let readout = Linear::new(&mut store, rng, "target_readout", 64, 1);
        store.freeze_all();
        FrozenVitTarget { store, vit, readout }
    }

    fn eval_batch(&self, images: &Tensor<S>) -> Vec<S> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let emb = self.vit.forward(&mut g, &self.store, x);
        let out = self.readout.forward(&mut g, &self.store, emb);
        g.value(out).data().to_vec()
    }
}

/// Draw a target function from its class distribution. Same seed, same
/// parameters.
pub fn sample_target<S: Scalar>(class: FunctionClass, seed: u64) -> TargetFunction<S> {
    let mut rng = Rng::seed_from(seed);
    match class {
        FunctionClass::Linear => TargetFunction::Linear {
            w: Tensor::randn(&[IMAGE_PIXELS], 1.0, &mut rng),
        },
        FunctionClass::ConvLinear => {
            let kernel = random_orthogonal(3, &mut rng).cast::<S>();
            TargetFunction::ConvLinear { kernel, w: Tensor::randn(&[IMAGE_PIXELS], 1.0, &mut rng) }
        }
        FunctionClass::TwoLayerCnn => TargetFunction::TwoLayerCnn {
            kernel: Tensor::randn(&[2, 2], 1.0, &mut rng),
            w: Tensor::randn(&[16], 1.0, &mut rng),
        },
        FunctionClass::FrozenVit => {
            TargetFunction::FrozenVit(Box::new(FrozenVitTarget::new(&mut rng)))
        }
    }
}

impl<S: Scalar> TargetFunction<S> {
    /// ConvLinear with an explicit kernel, bypassing the orthogonal draw
    /// (e.g. the identity-like kernel that reduces the class to Linear).
    pub fn conv_linear_with_kernel(kernel: Tensor<S>, w: Tensor<S>) -> Self {
        assert_eq!(kernel.shape(), &[3, 3], "conv_linear kernel must be 3x3");
        assert_eq!(w.shape(), &[IMAGE_PIXELS], "conv_linear readout must have {IMAGE_PIXELS} entries");
        TargetFunction::ConvLinear { kernel, w }
    }

    pub fn class(&self) -> FunctionClass {
        match self {
            TargetFunction::Linear { .. } => FunctionClass::Linear,
            TargetFunction::ConvLinear { .. } => FunctionClass::ConvLinear,
            TargetFunction::TwoLayerCnn { .. } => FunctionClass::TwoLayerCnn,
            TargetFunction::FrozenVit(_) => FunctionClass::FrozenVit,
        }
    }

    /// Evaluate on a batch of (already masked and normalized) images
    /// [b, 1, 8, 8].
    pub fn eval_batch(&self, images: &Tensor<S>) -> Vec<S> {
        let b = images.shape()[0];
        assert_eq!(
            images.shape(),
            &[b, 1, IMAGE_SIDE, IMAGE_SIDE],
            "eval_target: expected [b, 1, {IMAGE_SIDE}, {IMAGE_SIDE}], got {:?}",
            images.shape()
        );
        match self {
            TargetFunction::Linear { w } => images
                .data()
                .chunks(IMAGE_PIXELS)
                .map(|img| dot(img, w.data()))
                .collect(),
            TargetFunction::ConvLinear { kernel, w } => {
                let k4 = Tensor::new(&[1, 1, 3, 3], kernel.data().to_vec());
                let (conv, _) = kernels::conv2d_fwd(images, &k4, 1, 1);
                conv.data()
                    .chunks(IMAGE_PIXELS)
                    .map(|img| dot(img, w.data()))
                    .collect()
            }
            TargetFunction::TwoLayerCnn { kernel, w } => {
                let k4 = Tensor::new(&[1, 1, 2, 2], kernel.data().to_vec());
                let (conv, _) = kernels::conv2d_fwd(images, &k4, 2, 0);
                let act = kernels::relu(&conv);
                act.data().chunks(16).map(|img| dot(img, w.data())).collect()
            }
            TargetFunction::FrozenVit(t) => t.eval_batch(images),
        }
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Evaluate a target on a single masked image [1, 8, 8].
pub fn eval_target<S: Scalar>(f: &TargetFunction<S>, x: &Tensor<S>) -> S {
    assert_eq!(
        x.shape(),
        &[1, IMAGE_SIDE, IMAGE_SIDE],
        "eval_target: expected [1, {IMAGE_SIDE}, {IMAGE_SIDE}], got {:?}",
        x.shape()
    );
    let batched = Tensor::new(&[1, 1, IMAGE_SIDE, IMAGE_SIDE], x.data().to_vec());
    f.eval_batch(&batched)[0]
}

// ---------------------------------------------------------------------------
// prompts
// ---------------------------------------------------------------------------

/// A batch of interleaved example prompts. Rows are padded to `n_max`
/// slots; slots past `n` are zero and excluded from the loss. Pixels
/// outside the top-left d x d block are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBatch<S: Scalar = f32> {
    /// [batch, n_max, 1, 8, 8], masked.
    pub images: Tensor<S>,
    /// [batch, n_max]; values[i] = f(images[i]) for the row's target.
    pub values: Tensor<S>,
    /// Valid example pairs per row.
    pub n: usize,
    pub n_max: usize,
    /// Curriculum block size the images were masked to.
    pub d: usize,
}

impl<S: Scalar> PromptBatch<S> {
    pub fn batch_size(&self) -> usize {
        self.images.shape()[0]
    }

    /// Allocate an all-zero batch to be filled row by row.
    pub fn empty(batch: usize, n: usize, n_max: usize, d: usize) -> Self {
        assert!(n <= n_max, "prompt: n={n} exceeds n_max={n_max}");
        PromptBatch {
            images: Tensor::zeros(&[batch, n_max, 1, IMAGE_SIDE, IMAGE_SIDE]),
            values: Tensor::zeros(&[batch, n_max]),
            n,
            n_max,
            d,
        }
    }

    /// Fill row `row` by sampling `n` distinct images from `pool`, masking
    /// each to d, and labelling with the target evaluated on the masked
    /// image.
    pub fn fill_row(
        &mut self,
        row: usize,
        pool: &[Tensor<S>],
        f: &TargetFunction<S>,
        rng: &mut Rng,
    ) {
        let (n, n_max, d) = (self.n, self.n_max, self.d);
        assert!(
            pool.len() >= n,
            "build_prompt: prompt needs {n} images but only {} are available",
            pool.len()
        );
        let picks = rng.sample_distinct(pool.len(), n);
        let mut masked = Tensor::<S>::zeros(&[n, 1, IMAGE_SIDE, IMAGE_SIDE]);
        for (i, &pick) in picks.iter().enumerate() {
            let dst = &mut masked.data_mut()[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS];
            dst.copy_from_slice(pool[pick].data());
            mask_pixels_in_place(dst, d);
        }
        let values = f.eval_batch(&masked);

        let img_base = row * n_max * IMAGE_PIXELS;
        self.images.data_mut()[img_base..img_base + n * IMAGE_PIXELS]
            .copy_from_slice(masked.data());
        for (i, &v) in values.iter().enumerate() {
            self.values.data_mut()[row * n_max + i] = v;
        }
    }
}

/// One-row prompt from a pool of raw images: masks to d, labels with f,
/// pads to n_max.
pub fn build_prompt<S: Scalar>(
    pool: &[Tensor<S>],
    f: &TargetFunction<S>,
    d: usize,
    n: usize,
    n_max: usize,
    rng: &mut Rng,
) -> PromptBatch<S> {
    let mut batch = PromptBatch::empty(1, n, n_max, d);
    batch.fill_row(0, pool, f, rng);
    batch
}
