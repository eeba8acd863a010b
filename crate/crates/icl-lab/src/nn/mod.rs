//! Model zoo: causal decoder, CNN/ViT image encoders, and the composite
//! in-context regression model that interleaves image and value tokens.

pub mod block;
pub mod decoder;
pub mod encoder;
pub mod icl;
pub mod params;

pub use block::{causal_mask, compose_padding, full_mask, LayerNorm, Linear, TransformerBlock};
pub use decoder::Decoder;
pub use encoder::{sinusoidal_pe, CnnEncoder, Encoder, VitEncoder};
pub use icl::{IclModel, IclModelConfig};
pub use params::{Param, ParamId, ParamStore};

/// Decoder hyperparameters. Defaults: 256-dim embeddings, 12 layers,
/// 8 heads, capacity for 41 example pairs (82 tokens).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { embed_dim: 256, n_layers: 12, n_heads: 8, max_seq_len: 82 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEmbedding {
    Learned,
    Sinusoidal,
}

/// Image encoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncoderConfig {
    Cnn { n_layers: usize, channels: usize, kernel: usize },
    Vit { n_layers: usize, n_heads: usize, patch_size: usize, pos: PosEmbedding },
}

impl EncoderConfig {
    /// 8 conv layers, 32 channels, 3x3 kernels.
    pub fn default_cnn() -> Self {
        EncoderConfig::Cnn { n_layers: 8, channels: 32, kernel: 3 }
    }

    /// 4 layers, 8 heads, patch size 4, learned positions.
    pub fn default_vit() -> Self {
        EncoderConfig::Vit { n_layers: 4, n_heads: 8, patch_size: 4, pos: PosEmbedding::Learned }
    }
}
