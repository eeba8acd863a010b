//! Image encoders producing one embedding per 8x8 grayscale image: a
//! stride-1 CNN stack and a small ViT with learned or sinusoidal patch
//! position embeddings.

use crate::rng::Rng;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};
use crate::IMAGE_SIDE;

use super::block::{full_mask, Linear, TransformerBlock};
use super::params::{ParamId, ParamStore};
use super::{EncoderConfig, PosEmbedding};

/// PE[p, 2i] = sin(p / 10000^(2i/dim)), PE[p, 2i+1] = cos(p / 10000^(2i/dim)).
pub fn sinusoidal_pe<S: Scalar>(length: usize, dim: usize) -> Tensor<S> {
    assert!(dim.is_multiple_of(2), "sinusoidal positional encoding requires even dim, got {dim}");
    let mut pe = Tensor::zeros(&[length, dim]);
    for p in 0..length {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe.data_mut()[p * dim + 2 * i] = S::from_f64((p as f64 * freq).sin());
            pe.data_mut()[p * dim + 2 * i + 1] = S::from_f64((p as f64 * freq).cos());
        }
    }
    pe
}

pub enum Encoder {
    Cnn(CnnEncoder),
    Vit(VitEncoder),
}

impl Encoder {
    pub fn new<S: Scalar>(
        cfg: &EncoderConfig,
        embed_dim: usize,
        store: &mut ParamStore<S>,
        rng: &mut Rng,
        name: &str,
    ) -> Self {
        match cfg {
            EncoderConfig::Cnn { n_layers, channels, kernel } => Encoder::Cnn(CnnEncoder::new(
                store, rng, name, *n_layers, *channels, *kernel, embed_dim,
            )),
            EncoderConfig::Vit { n_layers, n_heads, patch_size, pos } => Encoder::Vit(
                VitEncoder::new(store, rng, name, *n_layers, *n_heads, *patch_size, *pos, embed_dim),
            ),
        }
    }

    /// images: [b, 1, 8, 8] -> embeddings [b, embed_dim].
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, images: Var) -> Var {
        match self {
            Encoder::Cnn(e) => e.forward(g, store, images),
            Encoder::Vit(e) => e.forward(g, store, images),
        }
    }
}

/// Stack of kernel-k, stride-1, same-padded conv+relu layers, then a global
/// flatten and a linear map to the embedding dim.
pub struct CnnEncoder {
    convs: Vec<(ParamId, ParamId)>,
    head: Linear,
    channels: usize,
}

impl CnnEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Rng,
        name: &str,
        n_layers: usize,
        channels: usize,
        kernel: usize,
        embed_dim: usize,
    ) -> Self {
        assert!(n_layers >= 1, "cnn encoder needs at least one layer");
        assert!(kernel % 2 == 1, "cnn encoder kernel must be odd for same padding, got {kernel}");
        let mut convs = Vec::with_capacity(n_layers);
        for layer in 0..n_layers {
            let in_ch = if layer == 0 { 1 } else { channels };
            let w = store.register_fan_in(
                format!("{name}.conv{layer}.w"),
                &[channels, in_ch, kernel, kernel],
                in_ch * kernel * kernel,
                rng,
            );
            let b = store.register(format!("{name}.conv{layer}.b"), Tensor::zeros(&[channels]), true);
            convs.push((w, b));
        }
        let head = Linear::new(
            store,
            rng,
            &format!("{name}.head"),
            channels * IMAGE_SIDE * IMAGE_SIDE,
            embed_dim,
        );
        CnnEncoder { convs, head, channels }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, images: Var) -> Var {
        let shape = g.value(images).shape().to_vec();
        assert_eq!(
            &shape[1..],
            &[1, IMAGE_SIDE, IMAGE_SIDE],
            "cnn encoder: expected [b, 1, {IMAGE_SIDE}, {IMAGE_SIDE}], got {shape:?}"
        );
        let b = shape[0];
        let mut x = images;
        for (w, bias) in &self.convs {
            let wv = store.var(g, *w);
            let kernel = g.value(wv).shape()[2];
            let conv = g.conv2d(x, wv, 1, kernel / 2);
            let bv = store.var(g, *bias);
            let biased = g.add_channel_bias(conv, bv);
            x = g.relu(biased);
        }
        let flat = g.reshape(x, &[b, self.channels * IMAGE_SIDE * IMAGE_SIDE]);
        self.head.forward(g, store, flat)
    }
}

/// Patchify, linearly project, add positional embeddings, run full-attention
/// transformer blocks, mean-pool the patch tokens, and map to the embedding
/// dim.
pub struct VitEncoder {
    patch_proj: Linear,
    pos: VitPos,
    blocks: Vec<TransformerBlock>,
    head: Linear,
    patch_size: usize,
    n_patches: usize,
    embed_dim: usize,
}

enum VitPos {
    Learned(ParamId),
    Sinusoidal,
}

impl VitEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Rng,
        name: &str,
        n_layers: usize,
        n_heads: usize,
        patch_size: usize,
        pos: PosEmbedding,
        embed_dim: usize,
    ) -> Self {
        assert!(
            patch_size > 0 && IMAGE_SIDE.is_multiple_of(patch_size),
            "vit encoder: patch size {patch_size} does not divide image side {IMAGE_SIDE}"
        );
        let per_side = IMAGE_SIDE / patch_size;
        let n_patches = per_side * per_side;
        let patch_proj = Linear::new(
            store,
            rng,
            &format!("{name}.patch_proj"),
            patch_size * patch_size,
            embed_dim,
        );
        let pos = match pos {
            PosEmbedding::Learned => VitPos::Learned(store.register(
                format!("{name}.pos_embed"),
                Tensor::randn(&[n_patches, embed_dim], 0.02, rng),
                true,
            )),
            PosEmbedding::Sinusoidal => VitPos::Sinusoidal,
        };
        let blocks = (0..n_layers)
            .map(|i| {
                TransformerBlock::new(store, rng, &format!("{name}.block{i}"), embed_dim, n_heads)
            })
            .collect();
        let head = Linear::new(store, rng, &format!("{name}.head"), embed_dim, embed_dim);
        VitEncoder { patch_proj, pos, blocks, head, patch_size, n_patches, embed_dim }
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, images: Var) -> Var {
        let shape = g.value(images).shape().to_vec();
        assert_eq!(
            &shape[1..],
            &[1, IMAGE_SIDE, IMAGE_SIDE],
            "vit encoder: expected [b, 1, {IMAGE_SIDE}, {IMAGE_SIDE}], got {shape:?}"
        );
        let b = shape[0];
        let p = self.n_patches;
        let patches = g.patches(images, self.patch_size);
        let mut tokens = self.patch_proj.forward(g, store, patches);

        let idx: Vec<u32> = (0..b * p).map(|t| (t % p) as u32).collect();
        let pos_rows = match &self.pos {
            VitPos::Learned(id) => {
                let table = store.var(g, *id);
                g.gather_rows(table, idx)
            }
            VitPos::Sinusoidal => {
                let table = g.constant(sinusoidal_pe::<S>(p, self.embed_dim));
                g.gather_rows(table, idx)
            }
        };
        tokens = g.add(tokens, pos_rows);

        let mask = full_mask::<S>(p);
        for block in &self.blocks {
            tokens = block.forward(g, store, tokens, b, p, &mask);
        }
        let pooled = g.mean_pool_groups(tokens, p);
        self.head.forward(g, store, pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoidal_pe_position_zero_alternates_zero_one() {
        let pe = sinusoidal_pe::<f64>(5, 8);
        for i in 0..4 {
            assert_eq!(pe.at(&[0, 2 * i]), 0.0, "sin(0) column {i}");
            assert_eq!(pe.at(&[0, 2 * i + 1]), 1.0, "cos(0) column {i}");
        }
    }

    #[test]
    fn sinusoidal_pe_first_entry_is_sin_one() {
        let pe = sinusoidal_pe::<f64>(2, 8);
        assert!((pe.at(&[1, 0]) - 1.0f64.sin()).abs() < 1e-12);
        assert!((pe.at(&[1, 0]) - 0.8415).abs() < 1e-4);
    }

    #[test]
    #[should_panic(expected = "even dim")]
    fn sinusoidal_pe_rejects_odd_dim() {
        let _ = sinusoidal_pe::<f64>(4, 7);
    }

    #[test]
    fn cnn_zero_image_with_zero_biases_gives_zero_embedding() {
        let mut rng = Rng::seed_from(1);
        let mut store = ParamStore::<f64>::new();
        let enc = CnnEncoder::new(&mut store, &mut rng, "enc", 2, 4, 3, 16);
        let mut g = Graph::new();
        let images = g.constant(Tensor::zeros(&[2, 1, 8, 8]));
        let out = enc.forward(&mut g, &store, images);
        assert_eq!(g.value(out).shape(), &[2, 16]);
        for &v in g.value(out).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn cnn_identical_images_get_identical_embeddings() {
        let mut rng = Rng::seed_from(2);
        let mut store = ParamStore::<f64>::new();
        let enc = CnnEncoder::new(&mut store, &mut rng, "enc", 2, 4, 3, 16);
        let img = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut rng);
        let mut both = Tensor::zeros(&[2, 1, 8, 8]);
        both.data_mut()[..64].copy_from_slice(img.data());
        both.data_mut()[64..].copy_from_slice(img.data());
        let mut g = Graph::new();
        let images = g.constant(both);
        let out = enc.forward(&mut g, &store, images);
        for c in 0..16 {
            assert_eq!(g.value(out).at(&[0, c]), g.value(out).at(&[1, c]));
        }
    }

    #[test]
    fn default_encoders_emit_256_dim_embeddings() {
        let mut rng = Rng::seed_from(8);
        let img = Tensor::<f32>::randn(&[2, 1, 8, 8], 1.0, &mut rng);
        for cfg in [crate::nn::EncoderConfig::default_cnn(), crate::nn::EncoderConfig::default_vit()] {
            let mut store = ParamStore::<f32>::new();
            let enc = crate::nn::Encoder::new(&cfg, 256, &mut store, &mut rng, "enc");
            let mut g = Graph::new();
            let v = g.constant(img.clone());
            let out = enc.forward(&mut g, &store, v);
            assert_eq!(g.value(out).shape(), &[2, 256]);
        }
    }

    #[test]
    fn vit_patch_count_for_patch_size_four_is_four() {
        let mut rng = Rng::seed_from(3);
        let mut store = ParamStore::<f32>::new();
        let enc = VitEncoder::new(
            &mut store,
            &mut rng,
            "vit",
            1,
            2,
            4,
            PosEmbedding::Learned,
            16,
        );
        assert_eq!(enc.n_patches(), 4);
    }

    #[test]
    #[should_panic(expected = "does not divide image side")]
    fn vit_rejects_non_dividing_patch_size() {
        let mut rng = Rng::seed_from(4);
        let mut store = ParamStore::<f32>::new();
        let _ = VitEncoder::new(&mut store, &mut rng, "vit", 1, 2, 3, PosEmbedding::Learned, 16);
    }

    #[test]
    fn permuting_patches_changes_learned_pe_embedding() {
        let mut rng = Rng::seed_from(5);
        let mut store = ParamStore::<f64>::new();
        let enc = VitEncoder::new(
            &mut store,
            &mut rng,
            "vit",
            2,
            2,
            4,
            PosEmbedding::Learned,
            16,
        );
        let img = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut rng);
        // Swap the two top patches (cols 0-3 <-> cols 4-7 of rows 0-3).
        let mut swapped = img.clone();
        for r in 0..4 {
            for c in 0..4 {
                swapped.data_mut()[r * 8 + c] = img.data()[r * 8 + c + 4];
                swapped.data_mut()[r * 8 + c + 4] = img.data()[r * 8 + c];
            }
        }
        let run = |image: &Tensor<f64>| {
            let mut g = Graph::new();
            let v = g.constant(image.clone());
            let out = enc.forward(&mut g, &store, v);
            g.value(out).clone()
        };
        let a = run(&img);
        let b = run(&swapped);
        let diff: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6, "embedding insensitive to patch positions (diff={diff})");
    }
}
