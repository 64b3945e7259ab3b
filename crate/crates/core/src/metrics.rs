//! Span extraction from BIO tag sequences and exact-match span scoring.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::IGNORE_LABEL;
use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub entity_type: String,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(label: &str) -> Tag<'_> {
    if label == "O" {
        Tag::Outside
    } else if let Some(t) = label.strip_prefix("B-") {
        Tag::Begin(t)
    } else if let Some(t) = label.strip_prefix("I-") {
        Tag::Inside(t)
    } else {
        // Prefix-less tags behave as continuations of their own type.
        Tag::Inside(label)
    }
}

/// Decodes spans in order of their start. `B-T` opens a span, `I-T`
/// extends an open span of type `T`, and an `I-T` with no open span of
/// that type starts a new one.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let tag = parse_tag(label.as_ref());
        let next = match tag {
            Tag::Outside => None,
            Tag::Begin(t) => Some((t, i)),
            Tag::Inside(t) => match open {
                Some((cur, start)) if cur == t => Some((cur, start)),
                _ => Some((t, i)),
            },
        };
        if let Some((t, start)) = open {
            if next.map_or(true, |(_, s)| s != start) {
                spans.push(Span {
                    entity_type: t.to_string(),
                    start,
                    end: i - 1,
                });
            }
        }
        open = next;
    }
    if let Some((t, start)) = open {
        spans.push(Span {
            entity_type: t.to_string(),
            start,
            end: labels.len() - 1,
        });
    }
    spans
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    #[serde(flatten)]
    pub scores: Prf,
    /// Number of gold spans of this type.
    pub support: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Every type seen in gold or predictions, sorted by name.
    pub entities: BTreeMap<String, EntityScore>,
    pub micro: Prf,
    /// Unweighted mean over the types that occur in gold.
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    pub token_accuracy: f64,
    /// F1 over individual non-`O` tags.
    pub token_micro_f1: f64,
    pub tokens: usize,
}

/// Scores predictions against gold, sentence by sentence. Positions whose
/// gold label is the ignore marker are dropped from both sides first.
pub fn score<G: AsRef<str>, P: AsRef<str>>(gold: &[Vec<G>], pred: &[Vec<P>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(contract(format!(
            "gold has {} sentences but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let (mut correct_tokens, mut tokens) = (0, 0);
    let (mut tok_tp, mut tok_fp, mut tok_fn) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(contract(format!(
                "sentence {i}: {} gold labels but {} predicted",
                g.len(),
                p.len()
            )));
        }
        let (g, p): (Vec<&str>, Vec<&str>) = g
            .iter()
            .zip(p)
            .map(|(a, b)| (a.as_ref(), b.as_ref()))
            .filter(|(a, _)| *a != IGNORE_LABEL)
            .unzip();
        for (a, b) in g.iter().zip(&p) {
            tokens += 1;
            if a == b {
                correct_tokens += 1;
                if *a != "O" {
                    tok_tp += 1;
                }
            } else {
                if *b != "O" {
                    tok_fp += 1;
                }
                if *a != "O" {
                    tok_fn += 1;
                }
            }
        }
        let gold_spans: HashSet<Span> = extract_spans(&g).into_iter().collect();
        let pred_spans: HashSet<Span> = extract_spans(&p).into_iter().collect();
        for s in &gold_spans {
            let c = counts.entry(s.entity_type.clone()).or_default();
            if pred_spans.contains(s) {
                c[0] += 1;
            } else {
                c[2] += 1;
            }
        }
        for s in pred_spans.difference(&gold_spans) {
            counts.entry(s.entity_type.clone()).or_default()[1] += 1;
        }
    }
    let entities: BTreeMap<String, EntityScore> = counts
        .iter()
        .map(|(t, &[tp, fp, fn_])| {
            let score = EntityScore {
                scores: Prf::from_counts(tp, fp, fn_),
                support: tp + fn_,
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
            };
            (t.clone(), score)
        })
        .collect();
    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |(a, b, c), v| (a + v[0], b + v[1], c + v[2]));
    let in_gold: Vec<&EntityScore> = entities.values().filter(|e| e.support > 0).collect();
    let macro_avg = if in_gold.is_empty() {
        Prf::default()
    } else {
        let k = in_gold.len() as f64;
        Prf {
            precision: in_gold.iter().map(|e| e.scores.precision).sum::<f64>() / k,
            recall: in_gold.iter().map(|e| e.scores.recall).sum::<f64>() / k,
            f1: in_gold.iter().map(|e| e.scores.f1).sum::<f64>() / k,
        }
    };
    Ok(EvalReport {
        entities,
        micro: Prf::from_counts(tp, fp, fn_),
        macro_avg,
        token_accuracy: if tokens == 0 { 0.0 } else { correct_tokens as f64 / tokens as f64 },
        token_micro_f1: Prf::from_counts(tok_tp, tok_fp, tok_fn).f1,
        tokens,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table with one row per entity type followed by
    /// the aggregate rows.
    pub fn to_table(&self) -> String {
        let width = self
            .entities
            .keys()
            .map(String::len)
            .chain(["token accuracy".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let row = |out: &mut String, name: &str, s: &Prf, support: Option<usize>| {
            let support = support.map_or(String::new(), |n| n.to_string());
            let _ = writeln!(
                out,
                "{name:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {support:>8}",
                s.precision, s.recall, s.f1
            );
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>8}",
            "entity", "precision", "recall", "f1", "support"
        );
        for (name, e) in &self.entities {
            row(&mut out, name, &e.scores, Some(e.support));
        }
        let total = self.entities.values().map(|e| e.support).sum();
        row(&mut out, "micro", &self.micro, Some(total));
        row(&mut out, "macro", &self.macro_avg, None);
        let _ = writeln!(out, "{:<width$}  {:>9.4}", "token accuracy", self.token_accuracy);
        let _ = writeln!(out, "{:<width$}  {:>9.4}", "token f1", self.token_micro_f1);
        out
    }
}
