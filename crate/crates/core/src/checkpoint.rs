//! A trained tagger (settings, vocabularies, weights) and its on-disk form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunSettings;
use crate::data::{Batch, LabelVocab, Sentence, TokenVocab};
use crate::error::{config, Error, Result};
use crate::metrics::{score, EvalReport};
use crate::model::Model;
use crate::nn::NamedArray;
use crate::rng::RngState;

pub const FORMAT: &str = "graphfuse-checkpoint";
pub const VERSION: u32 = 1;

/// Environment variable capping the number of evaluation threads.
pub const THREADS_ENV: &str = "GRAPHFUSE_THREADS";

#[derive(Clone, Debug)]
pub struct Tagger {
    pub settings: RunSettings,
    pub tokens: TokenVocab,
    pub labels: LabelVocab,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    settings: RunSettings,
    token_vocab: TokenVocab,
    label_vocab: LabelVocab,
    params: Vec<NamedArray>,
}

impl Tagger {
    /// Fresh, randomly initialized tagger.
    pub fn new(settings: RunSettings, tokens: TokenVocab, labels: LabelVocab, rng: &mut RngState) -> Result<Self> {
        settings.validate()?;
        let model = Model::new(&settings.model, tokens.len(), labels.len(), rng)?;
        Ok(Self {
            settings,
            tokens,
            labels,
            model,
        })
    }

    /// Rebuilds a tagger from saved weights.
    pub fn from_parts(
        settings: RunSettings,
        tokens: TokenVocab,
        labels: LabelVocab,
        params: &[NamedArray],
    ) -> Result<Self> {
        let tagger = Self::new(settings, tokens, labels, &mut RngState::new(0))?;
        tagger.model.store.load(params)?;
        Ok(tagger)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: FORMAT.to_string(),
            version: VERSION,
            settings: self.settings.clone(),
            token_vocab: self.tokens.clone(),
            label_vocab: self.labels.clone(),
            params: self.model.store.snapshot(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT {
            return Err(config(format!("not a checkpoint file (format `{}`)", file.format)));
        }
        if file.version != VERSION {
            return Err(config(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                file.version
            )));
        }
        Self::from_parts(file.settings, file.token_vocab, file.label_vocab, &file.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Batches of token ids in corpus order, without truncation.
    fn batches(&self, sentences: &[Vec<String>], batch_size: usize) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        let mut start = 0;
        Ok(sentences
            .chunks(batch_size)
            .map(|chunk| {
                let rows: Vec<(Vec<usize>, Vec<i64>)> = chunk
                    .iter()
                    .map(|s| (s.iter().map(|t| self.tokens.id(t)).collect(), Vec::new()))
                    .collect();
                let ids = (start..start + chunk.len()).collect();
                start += chunk.len();
                Batch::from_rows(&rows, ids)
            })
            .collect())
    }

    /// Predicted label ids for every sentence, in order. Empty sentences
    /// get empty predictions.
    pub fn predict_ids(&self, sentences: &[Vec<String>], batch_size: usize) -> Result<Vec<Vec<usize>>> {
        let nonempty: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
        let kept: Vec<Vec<String>> = nonempty.iter().map(|&i| sentences[i].clone()).collect();
        let batches = self.batches(&kept, batch_size)?;
        let threads = eval_threads().min(batches.len()).max(1);
        let flat = if threads <= 1 {
            let mut out = Vec::with_capacity(kept.len());
            for b in &batches {
                out.extend(self.model.predict(b)?);
            }
            out
        } else {
            self.predict_parallel(&batches, threads)?
        };
        let mut result = vec![Vec::new(); sentences.len()];
        for (i, p) in nonempty.into_iter().zip(flat) {
            result[i] = p;
        }
        Ok(result)
    }

    /// Each worker rebuilds the model from a snapshot of the weights and
    /// handles a contiguous range of batches; results are joined in order.
    fn predict_parallel(&self, batches: &[Batch], threads: usize) -> Result<Vec<Vec<usize>>> {
        let params = self.model.store.snapshot();
        let per = batches.len().div_ceil(threads);
        let results: Vec<Result<Vec<Vec<usize>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|chunk| {
                    let params = &params;
                    let (settings, tokens, labels) = (&self.settings, &self.tokens, &self.labels);
                    scope.spawn(move || {
                        let local = Tagger::from_parts(settings.clone(), tokens.clone(), labels.clone(), params)?;
                        let mut out = Vec::new();
                        for b in chunk {
                            out.extend(local.model.predict(b)?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(config("evaluation worker panicked"))))
                .collect()
        });
        let mut out = Vec::new();
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    pub fn predict(&self, sentences: &[Vec<String>], batch_size: usize) -> Result<Vec<Vec<String>>> {
        Ok(self
            .predict_ids(sentences, batch_size)?
            .into_iter()
            .map(|ids| ids.into_iter().map(|i| self.labels.label(i).to_string()).collect())
            .collect())
    }

    /// Scores predictions on a labeled corpus. Labels unknown to the
    /// tagger are reported as errors naming the label.
    pub fn evaluate(&self, corpus: &[Sentence], batch_size: usize) -> Result<EvalReport> {
        if let Some(label) = self.labels.first_unknown(corpus) {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        let tokens: Vec<Vec<String>> = corpus.iter().map(|s| s.tokens.clone()).collect();
        let gold: Vec<&[String]> = corpus.iter().map(|s| s.labels.as_slice()).collect();
        let pred = self.predict(&tokens, batch_size)?;
        let gold: Vec<Vec<&str>> = gold.iter().map(|g| g.iter().map(String::as_str).collect()).collect();
        score(&gold, &pred)
    }
}

/// Evaluation worker count: the environment cap if set, else the number of
/// available cores.
pub fn eval_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::data::build_label_vocab;

    fn corpus() -> Vec<Sentence> {
        let s = |t: &str, l: &str| {
            Sentence::new(
                t.split(' ').map(String::from).collect(),
                l.split(' ').map(String::from).collect(),
            )
        };
        vec![s("a b c", "B-X I-X O"), s("d a", "O B-Y"), s("c", "O")]
    }

    fn tagger() -> Tagger {
        let c = corpus();
        let mut settings = Preset::Desk.settings();
        settings.model.d_emb = 8;
        settings.model.d_model = 8;
        settings.model.encoder_heads = 2;
        settings.model.decoder_heads = 2;
        settings.model.gat_hidden = 8;
        settings.model.gat_heads = 2;
        Tagger::new(
            settings,
            TokenVocab::build(&c),
            build_label_vocab(&c).unwrap(),
            &mut RngState::new(5),
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let t = tagger();
        let back = Tagger::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.model.store.snapshot(), t.model.store.snapshot());
        let sents: Vec<Vec<String>> = corpus().into_iter().map(|s| s.tokens).collect();
        let batch = back.batches(&sents, 8).unwrap().remove(0);
        let mut r = RngState::new(0);
        let a = t.model.forward(&batch, &mut crate::nn::ForwardCtx::eval(&mut r)).unwrap().logits.to_vec();
        let b = back.model.forward(&batch, &mut crate::nn::ForwardCtx::eval(&mut r)).unwrap().logits.to_vec();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn foreign_files_rejected() {
        let t = tagger();
        let text = t.to_json().unwrap().replace(FORMAT, "other");
        assert!(Tagger::from_json(&text).is_err());
        let text = t.to_json().unwrap().replace("\"version\":1", "\"version\":99");
        assert!(Tagger::from_json(&text).is_err());
    }

    #[test]
    fn predictions_independent_of_batch_size_and_threads() {
        let t = tagger();
        let sents: Vec<Vec<String>> = corpus().into_iter().map(|s| s.tokens).chain([vec![], vec!["zz".into()]]).collect();
        let a = t.predict(&sents, 1).unwrap();
        let b = t.predict(&sents, 16).unwrap();
        let c = t.predict_parallel(&t.batches(&sents[..3], 1).unwrap(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], Vec::<String>::new());
        assert_eq!(a[4].len(), 1);
        let ids = t.predict_ids(&sents[..3], 1).unwrap();
        assert_eq!(c, ids);
    }

    #[test]
    fn unknown_gold_label_named() {
        let t = tagger();
        let bad = vec![Sentence::new(vec!["a".into()], vec!["B-NEW".into()])];
        match t.evaluate(&bad, 4) {
            Err(Error::UnknownLabel(l)) => assert_eq!(l, "B-NEW"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
