//! A desk-scale laboratory for in-context regression on small images.
//!
//! A decoder-only transformer is trained jointly with a CNN or ViT image
//! encoder to predict target values from interleaved example prompts
//! `(x_1, f(x_1), ..., x_n, f(x_n))`, where the targets come from sampled
//! function classes (linear maps, linear convolutions, a frozen two-layer
//! CNN, a frozen ViT) over downscaled grayscale images. Trained models are
//! benchmarked against least-squares, 3-nearest-neighbor, mean, and
//! gradient-descent-trained baselines on the same support examples.
//!
//! The numeric core is a small define-by-run autodiff over dense tensors
//! ([`tensor`]); everything above it is deterministic given a seed, and the
//! data-parallel inner loops (batched kernels, evaluation fan-out) produce
//! bit-identical results whether run sequentially or on the rayon pool.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod tasks;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

/// Images are 8x8 grayscale throughout (32x32 CIFAR inputs are downscaled
/// before anything else sees them).
pub const IMAGE_SIDE: usize = 8;
