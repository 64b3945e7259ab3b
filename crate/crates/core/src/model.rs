//! The full token classifier: encoder, optional graph attention over a
//! fully connected token graph, optional decoder refiner, linear head.

use crate::config::ModelConfig;
use crate::data::Batch;
use crate::decoder::DecoderRefiner;
use crate::encoder::Encoder;
use crate::error::Result;
use crate::gat::{GatLayer, GatOutput};
use crate::graph::{build_fully_connected, EdgeIndex};
use crate::head::{argmax_rows, token_loss, ClassifierHead};
use crate::nn::{ForwardCtx, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub gat: Option<GatLayer>,
    pub decoder: Option<DecoderRefiner>,
    pub head: ClassifierHead,
}

/// Logits plus the intermediate attention maps, for inspection and tests.
pub struct ForwardOutput {
    /// `[B, n, L]`.
    pub logits: Tensor,
    pub graph: Option<(EdgeIndex, GatOutput)>,
    pub decoder_attention: Vec<Tensor>,
}

impl Model {
    /// Builds and initializes a model. Parameters are drawn from `rng` in
    /// construction order, so a seed fully determines the initial weights.
    pub fn new(cfg: &ModelConfig, vocab_size: usize, labels: usize, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, cfg, vocab_size, rng)?;
        let gat = match cfg.variant.uses_gat() {
            true => Some(GatLayer::new(&mut store, cfg, rng)?),
            false => None,
        };
        let decoder = match cfg.variant.uses_decoder() {
            true => Some(DecoderRefiner::new(&mut store, cfg, rng)?),
            false => None,
        };
        let head = ClassifierHead::new(&mut store, cfg.d_model, labels, rng)?;
        Ok(Self {
            config: cfg.clone(),
            store,
            encoder,
            gat,
            decoder,
            head,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.head.labels
    }

    pub fn forward(&self, batch: &Batch, ctx: &mut ForwardCtx) -> Result<ForwardOutput> {
        let (b, n, d) = (batch.size(), batch.n_max, self.config.d_model);
        let mut h = self.encoder.forward(batch, ctx)?;
        let mut graph = None;
        if let Some(gat) = &self.gat {
            let positions = batch.real_positions();
            let edges = build_fully_connected(&batch.lengths)?;
            let nodes = h.reshape(&[b * n, d])?.index_select_rows(&positions)?;
            let out = gat.forward(&nodes, &edges, ctx)?;
            h = out.output.scatter_rows(&positions, b * n)?.reshape(&[b, n, d])?;
            graph = Some((edges, out));
        }
        let mut decoder_attention = Vec::new();
        if let Some(decoder) = &self.decoder {
            let refined = decoder.forward(&h, &batch.pad_mask(), ctx)?;
            h = refined.output;
            decoder_attention = refined.attention;
        }
        Ok(ForwardOutput {
            logits: self.head.classify(&h)?,
            graph,
            decoder_attention,
        })
    }

    pub fn loss(&self, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Tensor> {
        token_loss(&self.forward(batch, ctx)?.logits, &batch.label_ids)
    }

    /// Eval-mode label ids for the real tokens of every row of the batch.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Vec<usize>>> {
        let mut rng = RngState::new(0);
        let logits = self.forward(batch, &mut ForwardCtx::eval(&mut rng))?.logits;
        let ids = argmax_rows(&logits.data(), self.num_labels());
        Ok(batch
            .lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| ids[i * batch.n_max..i * batch.n_max + len].to_vec())
            .collect())
    }
}
