//! Transformer decoder layers used as a non-autoregressive refiner: the
//! target and the memory are the same sequence, no causal mask is applied,
//! and padded keys are masked in both attention blocks.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::nn::{residual_norm, FeedForward, ForwardCtx, LayerNorm, MultiHeadAttention, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub cross_attention: MultiHeadAttention,
    pub ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            self_attention: MultiHeadAttention::new(store, &format!("{name}.self_attention"), d, cfg.decoder_heads, rng)?,
            cross_attention: MultiHeadAttention::new(
                store,
                &format!("{name}.cross_attention"),
                d,
                cfg.decoder_heads,
                rng,
            )?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, cfg.decoder_ff, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d, rng),
        })
    }

    /// Post-norm order: self-attention, cross-attention over `memory`,
    /// feed-forward. Returns the output and both attention maps.
    pub fn forward(
        &self,
        target: &Tensor,
        memory: &Tensor,
        pad: &[bool],
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, [Tensor; 2])> {
        let (attended, self_weights) = self.self_attention.forward(target, target, pad, ctx)?;
        let x = residual_norm(target, &attended, &self.norm1, ctx)?;
        let (crossed, cross_weights) = self.cross_attention.forward(&x, memory, pad, ctx)?;
        let x = residual_norm(&x, &crossed, &self.norm2, ctx)?;
        let ff = self.ff.forward(&x, ctx)?;
        Ok((residual_norm(&x, &ff, &self.norm3, ctx)?, [self_weights, cross_weights]))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderRefiner {
    pub layers: Vec<DecoderLayer>,
}

pub struct RefinerOutput {
    pub output: Tensor,
    /// `[B, h, n, n]` weights of every attention block, in execution order.
    pub attention: Vec<Tensor>,
}

impl DecoderRefiner {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let layers = (0..cfg.decoder_layers)
            .map(|l| DecoderLayer::new(store, &format!("decoder.layer{l}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// `h_gat` is `[B, n, d]`; `pad[b * n + j]` marks padding. Every layer
    /// uses the GAT output as its memory.
    pub fn forward(&self, h_gat: &Tensor, pad: &[bool], ctx: &mut ForwardCtx) -> Result<RefinerOutput> {
        let mut x = h_gat.clone();
        let mut attention = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            let (out, weights) = layer.forward(&x, h_gat, pad, ctx)?;
            attention.extend(weights);
            x = out;
        }
        Ok(RefinerOutput { output: x, attention })
    }
}
