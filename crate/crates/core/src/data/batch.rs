use super::{LabelVocab, Sentence, TokenVocab, PAD_ID};
use crate::error::{config, Result};
use crate::rng::RngState;
use crate::tensor::IGNORE_INDEX;

/// Padded, masked mini-batch. All matrices are row-major `B × n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub label_ids: Vec<i64>,
    pub lengths: Vec<usize>,
    pub n_max: usize,
    /// Corpus index of each row, for mapping predictions back.
    pub sentence_ids: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    /// Builds a batch from token ids and optional label ids per sentence.
    pub fn from_rows(rows: &[(Vec<usize>, Vec<i64>)], sentence_ids: Vec<usize>) -> Self {
        let n_max = rows.iter().map(|(t, _)| t.len()).max().unwrap_or(0);
        let b = rows.len();
        let mut token_ids = vec![PAD_ID; b * n_max];
        let mut attention_mask = vec![false; b * n_max];
        let mut label_ids = vec![IGNORE_INDEX; b * n_max];
        let mut lengths = Vec::with_capacity(b);
        for (i, (tokens, labels)) in rows.iter().enumerate() {
            lengths.push(tokens.len());
            for j in 0..tokens.len() {
                token_ids[i * n_max + j] = tokens[j];
                attention_mask[i * n_max + j] = true;
                label_ids[i * n_max + j] = labels.get(j).copied().unwrap_or(IGNORE_INDEX);
            }
        }
        Self {
            token_ids,
            attention_mask,
            label_ids,
            lengths,
            n_max,
            sentence_ids,
        }
    }

    /// `true` at padded positions.
    pub fn pad_mask(&self) -> Vec<bool> {
        self.attention_mask.iter().map(|m| !m).collect()
    }

    /// Flat row index (`b * n_max + j`) of every real token, sample-major.
    pub fn real_positions(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .enumerate()
            .flat_map(|(b, &n)| (0..n).map(move |j| b * self.n_max + j))
            .collect()
    }
}

/// Encodes, truncates to `max_len`, optionally shuffles, and chunks the
/// corpus into batches of `batch_size` (the last one may be smaller).
pub fn make_batches(
    corpus: &[Sentence],
    batch_size: usize,
    max_len: usize,
    tokens: &TokenVocab,
    labels: &LabelVocab,
    shuffle: Option<&mut RngState>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || max_len == 0 {
        return Err(config("batch_size and max_len must be at least 1"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(rng) = shuffle {
        rng.shuffle(&mut order);
    }
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut rows = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let s = &corpus[i];
            let n = s.len().min(max_len);
            let ids = s.tokens[..n].iter().map(|t| tokens.id(t)).collect();
            let labs = s.labels[..n].iter().map(|l| labels.encode(l)).collect::<Result<Vec<_>>>()?;
            rows.push((ids, labs));
        }
        batches.push(Batch::from_rows(&rows, chunk.to_vec()));
    }
    Ok(batches)
}
