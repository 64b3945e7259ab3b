//! Parameter storage and the layers shared by the encoder and decoder.

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::rng::RngState;
use crate::tensor::{dropout, Tensor};

/// Layer-norm epsilon used everywhere.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over `(fan_in, fan_out)`.
    Xavier(usize, usize),
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Biases and normalization parameters are excluded from weight decay.
    pub decay: bool,
}

/// Serialized form of one parameter: name, shape and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of every trainable tensor of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, decay: bool, rng: &mut RngState) -> Tensor {
        assert!(self.get(name).is_none(), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier(fan_in, fan_out) => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
            }
            Init::Normal(std) => (0..n).map(|_| std * rng.normal()).collect(),
        };
        let tensor = Tensor::param(data, shape).expect("shape and data agree");
        self.params.push(Param {
            name: name.to_string(),
            tensor: tensor.clone(),
            decay,
        });
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.tensor.zero_grad());
    }

    pub fn snapshot(&self) -> Vec<NamedArray> {
        self.params
            .iter()
            .map(|p| NamedArray {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.to_vec(),
            })
            .collect()
    }

    /// Overwrites every parameter from `arrays`; names and shapes must
    /// match exactly.
    pub fn load(&self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.params.len() {
            return Err(contract(format!(
                "snapshot holds {} parameters, model has {}",
                arrays.len(),
                self.params.len()
            )));
        }
        for a in arrays {
            let p = self
                .get(&a.name)
                .ok_or_else(|| contract(format!("unknown parameter {}", a.name)))?;
            if p.tensor.shape() != a.shape.as_slice() || a.data.len() != p.tensor.numel() {
                return Err(Error::Shape {
                    op: "load",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: a.shape.clone(),
                });
            }
            p.tensor.data_mut().copy_from_slice(&a.data);
        }
        Ok(())
    }
}

/// Per-forward settings: randomness, mode and dropout probability.
pub struct ForwardCtx<'a> {
    pub rng: &'a mut RngState,
    pub training: bool,
    pub dropout: f64,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval(rng: &'a mut RngState) -> Self {
        Self {
            rng,
            training: false,
            dropout: 0.0,
        }
    }

    pub fn train(rng: &'a mut RngState, dropout: f64) -> Self {
        Self {
            rng,
            training: true,
            dropout,
        }
    }

    pub fn drop(&mut self, x: &Tensor) -> Result<Tensor> {
        dropout(x, self.dropout, self.rng, self.training)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut RngState) -> Self {
        Self {
            weight: store.add(&format!("{name}.weight"), &[d_in, d_out], Init::Xavier(d_in, d_out), true, rng),
            bias: store.add(&format!("{name}.bias"), &[d_out], Init::Zeros, false, rng),
        }
    }

    /// `x · W + b` over the last axis.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut RngState) -> Self {
        Self {
            gain: store.add(&format!("{name}.gain"), &[d], Init::Ones, false, rng),
            bias: store.add(&format!("{name}.bias"), &[d], Init::Zeros, false, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, LN_EPS)
    }
}

/// Scaled dot-product attention with several heads and a key padding mask.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, rng: &mut RngState) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(config(format!("width {d_model} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            heads,
            d_model,
        })
    }

    /// `query` is `[B, nq, d]`, `memory` is `[B, nk, d]`, `key_pad[b * nk + j]`
    /// marks padded keys. Returns the output and the `[B, h, nq, nk]`
    /// attention weights (before dropout).
    pub fn forward(
        &self,
        query: &Tensor,
        memory: &Tensor,
        key_pad: &[bool],
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, Tensor)> {
        let (b, nq, nk) = match (query.shape(), memory.shape()) {
            ([b, nq, d], [b2, nk, d2]) if b == b2 && *d == self.d_model && *d2 == self.d_model => (*b, *nq, *nk),
            (q, m) => {
                return Err(Error::Shape {
                    op: "attention",
                    lhs: q.to_vec(),
                    rhs: m.to_vec(),
                })
            }
        };
        if key_pad.len() != b * nk {
            return Err(contract("key padding mask does not match the memory shape"));
        }
        let (h, dh) = (self.heads, self.d_model / self.heads);
        let q = self.query.forward(query)?.reshape(&[b, nq, h, dh])?.permute(&[0, 2, 1, 3])?;
        let k = self.key.forward(memory)?.reshape(&[b, nk, h, dh])?.permute(&[0, 2, 3, 1])?;
        let v = self.value.forward(memory)?.reshape(&[b, nk, h, dh])?.permute(&[0, 2, 1, 3])?;
        let scores = q.matmul(&k)?.scale(1.0 / (dh as f64).sqrt());
        let mut mask = Vec::with_capacity(b * h * nq * nk);
        for bi in 0..b {
            let row = &key_pad[bi * nk..(bi + 1) * nk];
            for _ in 0..h * nq {
                mask.extend_from_slice(row);
            }
        }
        let weights = scores.masked_fill(&mask, f64::NEG_INFINITY)?.softmax(3)?;
        let mixed = ctx.drop(&weights)?.matmul(&v)?;
        let merged = mixed.permute(&[0, 2, 1, 3])?.reshape(&[b, nq, self.d_model])?;
        Ok((self.output.forward(&merged)?, weights))
    }
}

/// Position-wise `d → d_ff → d` block with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut RngState) -> Self {
        Self {
            expand: Linear::new(store, &format!("{name}.expand"), d, d_ff, rng),
            contract: Linear::new(store, &format!("{name}.contract"), d_ff, d, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let hidden = ctx.drop(&self.expand.forward(x)?.relu())?;
        self.contract.forward(&hidden)
    }
}

/// Post-norm sub-layer wrap: `norm(x + dropout(sub))`.
pub fn residual_norm(x: &Tensor, sub: &Tensor, norm: &LayerNorm, ctx: &mut ForwardCtx) -> Result<Tensor> {
    norm.forward(&x.add(&ctx.drop(sub)?)?)
}
