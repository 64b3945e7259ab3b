use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Sentence, IGNORE_LABEL};
use crate::error::{config, Error, Result};
use crate::tensor::IGNORE_INDEX;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Bijection between real labels and `0..len`. The ignore marker maps to
/// [`IGNORE_INDEX`] and never to a real id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelVocab {
    fn from(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.labels
    }
}

impl LabelVocab {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Label id for training targets; the ignore marker becomes `-100`.
    pub fn encode(&self, label: &str) -> Result<i64> {
        if label == IGNORE_LABEL {
            return Ok(IGNORE_INDEX);
        }
        self.get(label)
            .map(|i| i as i64)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// First label of `corpus` missing from this vocabulary, if any.
    pub fn first_unknown<'a>(&self, corpus: &'a [Sentence]) -> Option<&'a str> {
        corpus
            .iter()
            .flat_map(|s| s.labels.iter())
            .find(|l| l.as_str() != IGNORE_LABEL && self.get(l).is_none())
            .map(String::as_str)
    }

    /// `{label: id}` dump.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, usize> = self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }
}

/// Label vocabulary in order of first appearance; `O` is appended when the
/// corpus never uses it.
pub fn build_label_vocab(corpus: &[Sentence]) -> Result<LabelVocab> {
    if corpus.is_empty() {
        return Err(config("cannot build a label vocabulary from an empty corpus"));
    }
    let mut labels: Vec<String> = Vec::new();
    for l in corpus.iter().flat_map(|s| s.labels.iter()) {
        if l != IGNORE_LABEL && !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    if !labels.iter().any(|l| l == "O") {
        labels.push("O".to_string());
    }
    Ok(LabelVocab::from(labels))
}

/// Surface-token vocabulary built from the training split. Id 0 is
/// padding, id 1 stands for every token not seen in training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenVocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.tokens
    }
}

impl TokenVocab {
    pub fn build(corpus: &[Sentence]) -> Self {
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for t in corpus.iter().flat_map(|s| s.tokens.iter()) {
            if seen.insert(t, ()).is_none() {
                tokens.push(t.clone());
            }
        }
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}
