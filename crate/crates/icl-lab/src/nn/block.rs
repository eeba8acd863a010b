//! Shared layers: linear, affine layernorm, the pre-norm transformer block
//! used by both the decoder and the ViT encoders, and attention mask
//! builders.

use crate::rng::Rng;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{kernels, Scalar, Tensor};

use super::params::{ParamId, ParamStore};

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = store.register_fan_in(format!("{name}.w"), &[in_dim, out_dim], in_dim, rng);
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[out_dim]), true);
        Linear { w, b }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = store.var(g, self.w);
        let b = store.var(g, self.b);
        g.linear(x, w, b)
    }
}

/// Layernorm with learned gain and bias over the last dimension.
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let gain = store.register(format!("{name}.gain"), Tensor::full(&[dim], S::ONE), true);
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[dim]), true);
        LayerNorm { gain, bias }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let normed = g.layernorm_rows(x);
        let gain = store.var(g, self.gain);
        let bias = store.var(g, self.bias);
        let scaled = g.mul_row(normed, gain);
        g.add_row_bias(scaled, bias)
    }
}

/// Pre-norm transformer block: x + proj(attn(ln1 x)), then x + mlp(ln2 x),
/// with a 4x hidden MLP and gelu.
pub struct TransformerBlock {
    ln1: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    n_heads: usize,
}

impl TransformerBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Rng,
        name: &str,
        embed: usize,
        n_heads: usize,
    ) -> Self {
        assert!(
            embed.is_multiple_of(n_heads),
            "transformer block: embed dim {embed} not divisible by {n_heads} heads"
        );
        let hidden = 4 * embed;
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), embed),
            wq: Linear::new(store, rng, &format!("{name}.wq"), embed, embed),
            wk: Linear::new(store, rng, &format!("{name}.wk"), embed, embed),
            wv: Linear::new(store, rng, &format!("{name}.wv"), embed, embed),
            proj: Linear::new(store, rng, &format!("{name}.proj"), embed, embed),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), embed),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), embed, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, embed),
            n_heads,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        batch: usize,
        seq: usize,
        mask: &Tensor<S>,
    ) -> Var {
        let h = self.ln1.forward(g, store, x);
        let q = self.wq.forward(g, store, h);
        let k = self.wk.forward(g, store, h);
        let v = self.wv.forward(g, store, h);
        let att = g.mha(q, k, v, batch, seq, self.n_heads, mask);
        let att = self.proj.forward(g, store, att);
        let x = g.add(x, att);

        let h = self.ln2.forward(g, store, x);
        let h = self.fc1.forward(g, store, h);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, store, h);
        g.add(x, h)
    }
}

/// Lower-triangular causal mask: position i may attend to j <= i only.
pub fn causal_mask<S: Scalar>(seq: usize) -> Tensor<S> {
    let mut m = Tensor::zeros(&[seq, seq]);
    let masked = S::from_f64(kernels::MASKED);
    for i in 0..seq {
        for j in (i + 1)..seq {
            m.data_mut()[i * seq + j] = masked;
        }
    }
    m
}

/// All-pairs visibility (encoder-style attention).
pub fn full_mask<S: Scalar>(seq: usize) -> Tensor<S> {
    Tensor::zeros(&[seq, seq])
}

/// Compose a padding mask into `mask`: key positions >= valid_len become
/// invisible to every query.
pub fn compose_padding<S: Scalar>(mask: &mut Tensor<S>, valid_len: usize) {
    let seq = mask.shape()[0];
    assert!(valid_len <= seq, "compose_padding: valid_len {valid_len} exceeds seq {seq}");
    let masked = S::from_f64(kernels::MASKED);
    for i in 0..seq {
        for j in valid_len..seq {
            mask.data_mut()[i * seq + j] = masked;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = causal_mask::<f64>(4);
        for i in 0..4 {
            for j in 0..4 {
                if j <= i {
                    assert_eq!(m.at(&[i, j]), 0.0);
                } else {
                    assert_eq!(m.at(&[i, j]), kernels::MASKED);
                }
            }
        }
    }

    #[test]
    fn padding_hides_tail_keys() {
        let mut m = causal_mask::<f64>(4);
        compose_padding(&mut m, 2);
        assert_eq!(m.at(&[3, 1]), 0.0);
        assert_eq!(m.at(&[3, 2]), kernels::MASKED);
        assert_eq!(m.at(&[3, 3]), kernels::MASKED);
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn block_rejects_indivisible_heads() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::seed_from(0);
        let _ = TransformerBlock::new(&mut store, &mut rng, "b", 10, 4);
    }
}
