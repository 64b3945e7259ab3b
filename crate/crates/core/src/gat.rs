//! Multi-head graph attention over an [`EdgeIndex`].
//!
//! For an edge `j → i` and head `h` the score is
//! `LeakyReLU(a_h · [W_h x_i ‖ W_h x_j])`, normalized with a softmax over
//! the in-neighbourhood of `i`. Head outputs `Σ_j α_ij W_h x_j` go through
//! ELU, are concatenated, dropped out and projected back to the input width.

use crate::config::ModelConfig;
use crate::error::{config, Error, Result};
use crate::graph::EdgeIndex;
use crate::nn::{ForwardCtx, Init, Linear, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GatLayer {
    /// `[d, heads · d_head]`; columns `h·d_head .. (h+1)·d_head` are `W_h`.
    pub weight: Tensor,
    /// `[heads, d_head]`: the half of `a_h` applied to the target node.
    pub attn_target: Tensor,
    /// `[heads, d_head]`: the half of `a_h` applied to the source node.
    pub attn_source: Tensor,
    pub output: Linear,
    pub heads: usize,
    pub d_head: usize,
    pub d_model: usize,
    pub negative_slope: f64,
    pub residual: bool,
}

/// Forward result with the per-edge scores kept for inspection.
pub struct GatOutput {
    pub output: Tensor,
    /// `[E, heads]` logits before normalization.
    pub logits: Tensor,
    /// `[E, heads]` normalized coefficients before dropout.
    pub alpha: Tensor,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let (d, hidden, heads) = (cfg.d_model, cfg.gat_hidden, cfg.gat_heads);
        if heads == 0 || hidden % heads != 0 {
            return Err(config(format!("GAT hidden size {hidden} is not divisible by {heads} heads")));
        }
        let d_head = hidden / heads;
        Ok(Self {
            weight: store.add("gat.weight", &[d, hidden], Init::Xavier(d, hidden), true, rng),
            attn_target: store.add("gat.attn_target", &[heads, d_head], Init::Xavier(2 * d_head, 1), true, rng),
            attn_source: store.add("gat.attn_source", &[heads, d_head], Init::Xavier(2 * d_head, 1), true, rng),
            output: Linear::new(store, "gat.output", hidden, d, rng),
            heads,
            d_head,
            d_model: d,
            negative_slope: cfg.negative_slope,
            residual: cfg.gat_residual,
        })
    }

    /// Score of the edge `source → target` for one head, computed directly
    /// from parameter values.
    pub fn attention_logit(&self, head: usize, h_source: &[f64], h_target: &[f64]) -> f64 {
        let (w, a_t, a_s) = (self.weight.data(), self.attn_target.data(), self.attn_source.data());
        let hidden = self.heads * self.d_head;
        let project = |x: &[f64], k: usize| -> f64 {
            let col = head * self.d_head + k;
            x.iter().enumerate().map(|(r, v)| v * w[r * hidden + col]).sum()
        };
        let mut e = 0.0;
        for k in 0..self.d_head {
            e += a_t[head * self.d_head + k] * project(h_target, k);
            e += a_s[head * self.d_head + k] * project(h_source, k);
        }
        if e >= 0.0 {
            e
        } else {
            self.negative_slope * e
        }
    }

    /// `x` is `[node_count, d]` in the node numbering of `edges`.
    pub fn forward(&self, x: &Tensor, edges: &EdgeIndex, ctx: &mut ForwardCtx) -> Result<GatOutput> {
        let n = edges.node_count;
        if x.shape() != [n, self.d_model] {
            return Err(Error::Shape {
                op: "gat_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![n, self.d_model],
            });
        }
        let (heads, dh) = (self.heads, self.d_head);
        let projected = x.matmul(&self.weight)?.reshape(&[n, heads, dh])?;
        let score_t = projected.mul(&self.attn_target)?.sum_last();
        let score_s = projected.mul(&self.attn_source)?.sum_last();
        let logits = score_t
            .index_select_rows(&edges.targets)?
            .add(&score_s.index_select_rows(&edges.sources)?)?
            .leaky_relu(self.negative_slope);
        let alpha = logits.segment_softmax(&edges.targets, n)?;
        let messages = ctx.drop(&alpha)?.edge_aggregate(&projected, &edges.sources, &edges.targets)?;
        let hidden = messages.elu().reshape(&[n, heads * dh])?;
        let mut output = self.output.forward(&ctx.drop(&hidden)?)?;
        if self.residual {
            output = output.add(x)?;
        }
        Ok(GatOutput { output, logits, alpha })
    }
}
