//! Optimization: learning-rate schedule, gradient clipping, AdamW and the
//! epoch loop with validation-based early stopping.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Tagger;
use crate::config::{RunSettings, TrainConfig};
use crate::data::{build_label_vocab, make_batches, Sentence, TokenVocab};
use crate::error::{config, Error, Result};
use crate::nn::{ForwardCtx, NamedArray, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Linear warmup from 0 to `peak` over `round(warmup_ratio · total)` steps,
/// then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, warmup_ratio: f64, peak: f64) -> Result<f64> {
    if total == 0 {
        return Err(config("learning-rate schedule needs at least one step"));
    }
    let step = step.min(total);
    let warmup = (warmup_ratio * total as f64).round() as usize;
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if warmup == total {
        return Ok(peak);
    }
    Ok(peak * (total - step) as f64 / (total - warmup) as f64)
}

/// Scales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1 when nothing changed).
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm <= max_norm {
        return 1.0;
    }
    let scale = max_norm / norm;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    scale
}

/// Applies [`clip_gradients`] to the gradient buffers held by `params`.
pub fn clip_param_gradients(params: &[Tensor], max_norm: f64) -> f64 {
    let mut grads: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_default()).collect();
    let scale = clip_gradients(&mut grads, max_norm);
    if scale != 1.0 {
        for (p, g) in params.iter().zip(grads) {
            if !g.is_empty() {
                *p.grad_mut() = Some(g);
            }
        }
    }
    scale
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One update of every parameter holding a gradient. Parameters marked
    /// as exempt from decay (biases, norm gains) are only moved by the
    /// adaptive step.
    pub fn update(&mut self, store: &ParamStore, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in store.iter().enumerate() {
            let Some(g) = p.tensor.grad() else { continue };
            let mut theta = p.tensor.data_mut();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let decay = if p.decay { lr * self.weight_decay } else { 0.0 };
            for i in 0..theta.len() {
                theta[i] -= decay * theta[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

pub struct TrainOutcome {
    /// Tagger holding the weights of the best validation epoch.
    pub tagger: Tagger,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_micro_f1: f64,
}

impl TrainOutcome {
    pub fn history_jsonl(&self) -> String {
        self.history.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}

/// Trains a fresh tagger. See [`train_with`].
pub fn train(settings: &RunSettings, train_set: &[Sentence], valid_set: &[Sentence]) -> Result<TrainOutcome> {
    train_with(settings, train_set, valid_set, |_| {})
}

/// Trains a fresh tagger, calling `observe` after each epoch's validation.
/// The token vocabulary comes from the training split; labels are taken
/// from training then validation in order of appearance.
pub fn train_with(
    settings: &RunSettings,
    train_set: &[Sentence],
    valid_set: &[Sentence],
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    settings.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(config("training and validation corpora must be non-empty"));
    }
    let cfg = &settings.train;
    let root = RngState::new(cfg.seed);
    let (mut init_rng, mut order_rng, mut dropout_rng) = (root.fork(1), root.fork(2), root.fork(3));
    let tokens = TokenVocab::build(train_set);
    let both: Vec<Sentence> = train_set.iter().chain(valid_set).cloned().collect();
    let labels = build_label_vocab(&both)?;
    let tagger = Tagger::new(settings.clone(), tokens, labels, &mut init_rng)?;

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let params: Vec<Tensor> = tagger.model.store.iter().map(|p| p.tensor.clone()).collect();
    let mut opt = AdamW::new(&tagger.model.store, cfg);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<NamedArray>)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            train_set,
            cfg.batch_size,
            cfg.max_len,
            &tagger.tokens,
            &tagger.labels,
            Some(&mut order_rng),
        )?;
        let (mut loss_sum, mut counted) = (0.0, 0usize);
        for batch in &batches {
            tagger.model.store.zero_grad();
            let mut ctx = ForwardCtx::train(&mut dropout_rng, cfg.dropout);
            let loss = match tagger.model.loss(batch, &mut ctx) {
                Err(Error::DegenerateBatch) => {
                    step += 1;
                    continue;
                }
                other => other?,
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            loss.backward()?;
            clip_param_gradients(&params, cfg.clip_norm);
            let lr = lr_schedule(step, total, cfg.warmup_ratio, cfg.learning_rate)?;
            opt.update(&tagger.model.store, lr);
            loss_sum += value;
            counted += 1;
            step += 1;
        }
        let report = tagger.evaluate(valid_set, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: if counted == 0 { 0.0 } else { loss_sum / counted as f64 },
            micro_f1: report.micro.f1,
            macro_f1: report.macro_avg.f1,
        };
        observe(&record);
        history.push(record);
        let improved = best.as_ref().map_or(true, |(_, f, _)| report.micro.f1 > *f);
        if improved {
            best = Some((epoch, report.micro.f1, tagger.model.store.snapshot()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_micro_f1, weights) = best.expect("at least one epoch ran");
    tagger.model.store.load(&weights)?;
    Ok(TrainOutcome {
        tagger,
        history,
        best_epoch,
        best_micro_f1,
    })
}
