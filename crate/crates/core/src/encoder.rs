//! Contextual token encoder: trainable embeddings, fixed sinusoidal
//! positions, optional self-attention blocks, and the linear projection
//! that produces node features for the token graph.

use crate::config::ModelConfig;
use crate::data::Batch;
use crate::error::{config, Result};
use crate::nn::{residual_norm, FeedForward, ForwardCtx, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// `n × d_emb` sinusoidal table: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_encoding(n: usize, d_emb: usize) -> Result<Vec<f64>> {
    if d_emb % 2 != 0 {
        return Err(config(format!("positional encoding needs an even width, got {d_emb}")));
    }
    let mut table = vec![0.0; n * d_emb];
    for pos in 0..n {
        for i in 0..d_emb / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_emb as f64);
            table[pos * d_emb + 2 * i] = angle.sin();
            table[pos * d_emb + 2 * i + 1] = angle.cos();
        }
    }
    Ok(table)
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    attention: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

impl EncoderBlock {
    fn forward(&self, x: &Tensor, pad: &[bool], ctx: &mut ForwardCtx) -> Result<Tensor> {
        let (attended, _) = self.attention.forward(x, x, pad, ctx)?;
        let x = residual_norm(x, &attended, &self.norm1, ctx)?;
        let ff = self.ff.forward(&x, ctx)?;
        residual_norm(&x, &ff, &self.norm2, ctx)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: Tensor,
    blocks: Vec<EncoderBlock>,
    pub projection: Linear,
    d_emb: usize,
    d_model: usize,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize, rng: &mut RngState) -> Result<Self> {
        let d = cfg.d_emb;
        let embedding = store.add("encoder.embedding", &[vocab_size, d], Init::Normal(1.0 / (d as f64).sqrt()), true, rng);
        let mut blocks = Vec::with_capacity(cfg.encoder_layers);
        for l in 0..cfg.encoder_layers {
            let name = format!("encoder.block{l}");
            blocks.push(EncoderBlock {
                attention: MultiHeadAttention::new(store, &format!("{name}.attention"), d, cfg.encoder_heads, rng)?,
                norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, rng),
                ff: FeedForward::new(store, &format!("{name}.ff"), d, cfg.encoder_ff, rng),
                norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, rng),
            });
        }
        let projection = Linear::new(store, "encoder.projection", d, cfg.d_model, rng);
        Ok(Self {
            embedding,
            blocks,
            projection,
            d_emb: d,
            d_model: cfg.d_model,
        })
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    /// Embedding plus positions, before any block: `[B, n, d_emb]`.
    pub fn embed(&self, batch: &Batch) -> Result<Tensor> {
        let (b, n) = (batch.size(), batch.n_max);
        let tokens = self.embedding.embedding(&batch.token_ids)?.reshape(&[b, n, self.d_emb])?;
        let positions = Tensor::new(positional_encoding(n, self.d_emb)?, &[n, self.d_emb])?;
        tokens.add(&positions)
    }

    /// Contextual features `[B, n, d_model]`.
    pub fn forward(&self, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let pad = batch.pad_mask();
        let mut x = ctx.drop(&self.embed(batch)?)?;
        for block in &self.blocks {
            x = block.forward(&x, &pad, ctx)?;
        }
        let out = self.projection.forward(&x)?;
        debug_assert_eq!(out.shape().last(), Some(&self.d_model));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[Vec<usize>]) -> Batch {
        let rows: Vec<(Vec<usize>, Vec<i64>)> = rows.iter().map(|r| (r.clone(), vec![0; r.len()])).collect();
        Batch::from_rows(&rows, (0..rows.len()).collect())
    }

    fn cfg(layers: usize) -> ModelConfig {
        ModelConfig {
            d_emb: 8,
            d_model: 6,
            encoder_layers: layers,
            encoder_heads: 2,
            encoder_ff: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn position_zero_row() {
        let pe = positional_encoding(3, 6).unwrap();
        assert_eq!(&pe[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn position_one_column_zero_is_sin_one() {
        let pe = positional_encoding(2, 4).unwrap();
        assert_eq!(pe[4], 1f64.sin());
        assert_eq!(pe[5], 1f64.cos());
        assert_eq!(pe[6], (1.0 / 100f64).sin());
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(positional_encoding(2, 5), Err(crate::Error::Config(_))));
    }

    #[test]
    fn degenerate_stack_is_projection_of_embedding() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &cfg(0), 10, &mut rng).unwrap();
        let b = batch(&[vec![2, 3, 4], vec![5]]);
        let mut r = RngState::new(0);
        let out = enc.forward(&b, &mut ForwardCtx::eval(&mut r)).unwrap();
        assert_eq!(out.shape(), &[2, 3, 6]);
        let want = enc.projection.forward(&enc.embed(&b).unwrap()).unwrap();
        assert_eq!(out.to_vec(), want.to_vec());
    }

    #[test]
    fn out_of_range_id_is_contract_error() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &cfg(1), 5, &mut rng).unwrap();
        let mut r = RngState::new(0);
        let err = enc.forward(&batch(&[vec![7]]), &mut ForwardCtx::eval(&mut r)).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn padded_token_ids_do_not_leak() {
        for layers in [0, 1, 2] {
            let mut rng = RngState::new(3);
            let mut store = ParamStore::new();
            let enc = Encoder::new(&mut store, &cfg(layers), 12, &mut rng).unwrap();
            let mut a = batch(&[vec![2, 3, 4, 5], vec![6, 7]]);
            let mut r = RngState::new(0);
            let out_a = enc.forward(&a, &mut ForwardCtx::eval(&mut r)).unwrap().to_vec();
            a.token_ids[6] = 11;
            a.token_ids[7] = 9;
            let out_b = enc.forward(&a, &mut ForwardCtx::eval(&mut r)).unwrap().to_vec();
            for pos in a.real_positions() {
                for k in 0..6 {
                    assert_eq!(out_a[pos * 6 + k], out_b[pos * 6 + k], "layers {layers}");
                }
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = RngState::new(3);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &cfg(2), 12, &mut rng).unwrap();
        let b = batch(&[vec![2, 3, 4]]);
        let mut r1 = RngState::new(1);
        let mut r2 = RngState::new(2);
        let mut ctx1 = ForwardCtx { rng: &mut r1, training: false, dropout: 0.5 };
        let mut ctx2 = ForwardCtx { rng: &mut r2, training: false, dropout: 0.5 };
        assert_eq!(enc.forward(&b, &mut ctx1).unwrap().to_vec(), enc.forward(&b, &mut ctx2).unwrap().to_vec());
    }
}
