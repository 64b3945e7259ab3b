//! Token classification head and its loss.

use crate::error::{config, Result};
use crate::nn::{Linear, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub linear: Linear,
    pub labels: usize,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, d: usize, labels: usize, rng: &mut RngState) -> Result<Self> {
        if labels < 2 {
            return Err(config(format!("a classifier needs at least 2 labels, got {labels}")));
        }
        Ok(Self {
            linear: Linear::new(store, "head", d, labels, rng),
            labels,
        })
    }

    /// Per-token logits `[B, n, L]`; no softmax is applied.
    pub fn classify(&self, h: &Tensor) -> Result<Tensor> {
        self.linear.forward(h)
    }
}

/// Mean token cross-entropy over positions whose label is not the ignore
/// index. `logits` may have any leading shape; the last axis holds labels.
pub fn token_loss(logits: &Tensor, label_ids: &[i64]) -> Result<Tensor> {
    let l = *logits.shape().last().unwrap_or(&0);
    logits.reshape(&[logits.numel() / l.max(1), l])?.masked_cross_entropy(label_ids)
}

/// Row-wise argmax over the last axis; ties resolve to the lowest index.
pub fn argmax_rows(values: &[f64], width: usize) -> Vec<usize> {
    values
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, DEFAULT_FLOOR};
    use crate::tensor::IGNORE_INDEX;

    fn head(d: usize, l: usize, seed: u64) -> (ClassifierHead, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(seed);
        (ClassifierHead::new(&mut store, d, l, &mut rng).unwrap(), store)
    }

    fn random(rng: &mut RngState, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()
    }

    #[test]
    fn single_label_rejected() {
        let mut rng = RngState::new(0);
        assert!(matches!(
            ClassifierHead::new(&mut ParamStore::new(), 4, 1, &mut rng),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn zero_weights_give_bias() {
        let (h, _) = head(4, 3, 1);
        h.linear.weight.data_mut().fill(0.0);
        h.linear.bias.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let mut rng = RngState::new(2);
        let x = Tensor::new(random(&mut rng, 2 * 5 * 4), &[2, 5, 4]).unwrap();
        let logits = h.classify(&x).unwrap();
        assert_eq!(logits.shape(), &[2, 5, 3]);
        for row in logits.to_vec().chunks(3) {
            assert_eq!(row, [0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn uniform_logits_give_ln_l() {
        let logits = Tensor::zeros(&[1, 1, 5]);
        let loss = token_loss(&logits, &[3]).unwrap().item();
        assert!((loss - 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ignored_positions_match_deletion() {
        let mut rng = RngState::new(3);
        let full = random(&mut rng, 6 * 4);
        let labels = [0, IGNORE_INDEX, 2, 3, IGNORE_INDEX, 1];
        let kept: Vec<f64> = full
            .chunks(4)
            .zip(labels)
            .filter(|(_, y)| *y != IGNORE_INDEX)
            .flat_map(|(r, _)| r.to_vec())
            .collect();
        let a = token_loss(&Tensor::new(full, &[6, 4]).unwrap(), &labels).unwrap().item();
        let b = token_loss(&Tensor::new(kept, &[4, 4]).unwrap(), &[0, 2, 3, 1]).unwrap().item();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ignored_position_has_zero_gradient() {
        let mut rng = RngState::new(4);
        let logits = Tensor::param(random(&mut rng, 3 * 4), &[3, 4]).unwrap();
        token_loss(&logits, &[1, IGNORE_INDEX, 0]).unwrap().backward().unwrap();
        let g = logits.grad().unwrap();
        assert!(g[4..8].iter().all(|&v| v == 0.0));
        assert!(g[0..4].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_invariant_to_row_shifts_and_nonnegative() {
        let mut rng = RngState::new(5);
        for _ in 0..50 {
            let base = random(&mut rng, 4 * 3);
            let shifted: Vec<f64> = base
                .chunks(3)
                .enumerate()
                .flat_map(|(i, r)| r.iter().map(move |v| v + 10.0 * i as f64 - 7.0).collect::<Vec<_>>())
                .collect();
            let labels = [0, 2, 1, IGNORE_INDEX];
            let a = token_loss(&Tensor::new(base, &[4, 3]).unwrap(), &labels).unwrap().item();
            let b = token_loss(&Tensor::new(shifted, &[4, 3]).unwrap(), &labels).unwrap().item();
            assert!(a >= 0.0);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn all_ignored_is_degenerate() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            token_loss(&logits, &[IGNORE_INDEX, IGNORE_INDEX]),
            Err(crate::Error::DegenerateBatch)
        ));
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let (h, store) = head(5, 3, 6);
        let mut rng = RngState::new(7);
        let x = Tensor::new(random(&mut rng, 4 * 5), &[1, 4, 5]).unwrap();
        let report = check_gradients(
            &store.named_tensors(),
            || token_loss(&h.classify(&x)?, &[0, 2, IGNORE_INDEX, 1]),
            1e-4,
            DEFAULT_FLOOR,
        )
        .unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_rows(&[1.0, 3.0, 3.0, 0.0, 0.0, 0.0], 3), vec![1, 0]);
    }
}
