//! GPT-2-style causal decoder: learned positional embeddings, a stack of
//! pre-norm transformer blocks, and a final layernorm. The attention mask
//! is supplied by the caller so causal and causal-plus-padding variants
//! share one code path.

use crate::rng::Rng;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

use super::block::{LayerNorm, TransformerBlock};
use super::params::{ParamId, ParamStore};
use super::DecoderConfig;

pub struct Decoder {
    pub cfg: DecoderConfig,
    pos_embed: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
}

impl Decoder {
    pub fn new<S: Scalar>(cfg: &DecoderConfig, store: &mut ParamStore<S>, rng: &mut Rng) -> Self {
        assert!(
            cfg.embed_dim.is_multiple_of(cfg.n_heads),
            "decoder: embed dim {} not divisible by {} heads",
            cfg.embed_dim,
            cfg.n_heads
        );
        // 0.02-std init for the position table, GPT-2 convention.
        let pos_embed = store.register(
            "decoder.pos_embed",
            Tensor::randn(&[cfg.max_seq_len, cfg.embed_dim], 0.02, rng),
            true,
        );
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    rng,
                    &format!("decoder.block{i}"),
                    cfg.embed_dim,
                    cfg.n_heads,
                )
            })
            .collect();
        let ln_f = LayerNorm::new(store, "decoder.ln_f", cfg.embed_dim);
        Decoder { cfg: cfg.clone(), pos_embed, blocks, ln_f }
    }

    /// tokens: [batch*seq, embed]; mask: [seq, seq] additive logit mask.
    /// Output keeps the [batch*seq, embed] layout.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        tokens: Var,
        batch: usize,
        seq: usize,
        mask: &Tensor<S>,
    ) -> Var {
        assert!(
            seq <= self.cfg.max_seq_len,
            "decoder: sequence length {seq} exceeds capacity {}",
            self.cfg.max_seq_len
        );
        assert_eq!(
            g.value(tokens).shape(),
            &[batch * seq, self.cfg.embed_dim],
            "decoder: token shape {:?} != [{} * {}, {}]",
            g.value(tokens).shape(),
            batch,
            seq,
            self.cfg.embed_dim
        );
        let pos_table = store.var(g, self.pos_embed);
        let idx: Vec<u32> = (0..batch * seq).map(|t| (t % seq) as u32).collect();
        let pos = g.gather_rows(pos_table, idx);
        let mut x = g.add(tokens, pos);
        for block in &self.blocks {
            x = block.forward(g, store, x, batch, seq, mask);
        }
        self.ln_f.forward(g, store, x)
    }
}
