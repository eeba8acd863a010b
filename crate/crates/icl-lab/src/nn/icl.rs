//! The composite in-context learner: encoder embeddings and scalar value
//! embeddings are interleaved as `[enc(x_1), emb(y_1), enc(x_2), ...]`,
//! run through the causal decoder, and predictions are read out at the
//! image-token positions — so the prediction for pair i sees exactly
//! `(x_1, y_1, ..., x_{i-1}, y_{i-1}, x_i)`.

use crate::rng::Rng;
use crate::tasks::PromptBatch;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};
use crate::IMAGE_SIDE;

use super::block::{causal_mask, Linear};
use super::decoder::Decoder;
use super::encoder::Encoder;
use super::params::ParamStore;
use super::{DecoderConfig, EncoderConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct IclModelConfig {
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
}

pub struct IclModel {
    pub cfg: IclModelConfig,
    pub encoder: Encoder,
    pub value_embed: Linear,
    pub decoder: Decoder,
    pub readout: Linear,
}

impl IclModel {
    pub fn new<S: Scalar>(cfg: &IclModelConfig, store: &mut ParamStore<S>, rng: &mut Rng) -> Self {
        let embed = cfg.decoder.embed_dim;
        let encoder = Encoder::new(&cfg.encoder, embed, store, rng, "encoder");
        let value_embed = Linear::new(store, rng, "value_embed", 1, embed);
        let decoder = Decoder::new(&cfg.decoder, store, rng);
        let readout = Linear::new(store, rng, "readout", embed, 1);
        IclModel { cfg: cfg.clone(), encoder, value_embed, decoder, readout }
    }

    /// Longest prompt (in example pairs) the decoder can hold.
    pub fn n_max(&self) -> usize {
        self.cfg.decoder.max_seq_len / 2
    }

    /// Predictions for every pair position: output shape [batch, n].
    /// Prediction i is read at the token of enc(x_i), before y_i enters the
    /// sequence.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        prompt: &PromptBatch<S>,
    ) -> Var {
        let b = prompt.batch_size();
        let n = prompt.n;
        assert!(
            n <= self.n_max(),
            "icl model: prompt length {n} exceeds model capacity {}",
            self.n_max()
        );

        // First n valid slots of each row, flattened to [b*n, 1, 8, 8].
        let px = IMAGE_SIDE * IMAGE_SIDE;
        let mut images = Tensor::<S>::zeros(&[b * n, 1, IMAGE_SIDE, IMAGE_SIDE]);
        let mut values = Tensor::<S>::zeros(&[b * n, 1]);
        for row in 0..b {
            for i in 0..n {
                let src = (row * prompt.n_max + i) * px;
                let dst = (row * n + i) * px;
                images.data_mut()[dst..dst + px]
                    .copy_from_slice(&prompt.images.data()[src..src + px]);
                values.data_mut()[row * n + i] = prompt.values.data()[row * prompt.n_max + i];
            }
        }

        let image_var = g.constant(images);
        let value_var = g.constant(values);
        let enc = self.encoder.forward(g, store, image_var);
        let vemb = self.value_embed.forward(g, store, value_var);

        // Interleave: token (row, 2i) = enc row*n+i, token (row, 2i+1) = value.
        let cat = g.concat_rows(enc, vemb);
        let interleave: Vec<u32> = (0..b * 2 * n)
            .map(|t| {
                let (row, pos) = (t / (2 * n), t % (2 * n));
                let pair = (row * n + pos / 2) as u32;
                if pos % 2 == 0 {
                    pair
                } else {
                    (b * n) as u32 + pair
                }
            })
            .collect();
        let tokens = g.gather_rows(cat, interleave);

        let mask = causal_mask::<S>(2 * n);
        let hidden = self.decoder.forward(g, store, tokens, b, 2 * n, &mask);

        let image_positions: Vec<u32> = (0..b * n)
            .map(|t| {
                let (row, i) = (t / n, t % n);
                (row * 2 * n + 2 * i) as u32
            })
            .collect();
        let at_images = g.gather_rows(hidden, image_positions);
        let preds = self.readout.forward(g, store, at_images);
        g.reshape(preds, &[b, n])
    }
}
