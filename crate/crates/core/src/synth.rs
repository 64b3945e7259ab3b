//! Deterministic synthetic tagging corpora with known labeling rules.
//!
//! * `copy`: a token's label is a fixed function of its id.
//! * `window`: a token's label depends on the previous token.
//! * `relational-match`: a token is tagged when the same token occurs
//!   elsewhere in the sentence; matching pairs are placed far apart so no
//!   short window sees both occurrences.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Sentence;
use crate::error::{config, Error, Result};
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Window,
    RelationalMatch,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Window => "window",
            TaskKind::RelationalMatch => "relational-match",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "window" => Ok(TaskKind::Window),
            "relational-match" | "relational" => Ok(TaskKind::RelationalMatch),
            _ => Err(config(format!(
                "unknown task `{s}` (expected copy, window or relational-match)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Relational task: smallest distance between the two occurrences.
    pub min_match_distance: usize,
    /// Relational task: largest number of matching pairs per sentence.
    pub max_pairs: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Copy,
            vocab_size: 50,
            min_len: 5,
            max_len: 20,
            seed: 0,
            train: 500,
            valid: 100,
            test: 200,
            min_match_distance: 20,
            max_pairs: 2,
        }
    }
}

impl TaskSpec {
    pub fn copy(seed: u64) -> Self {
        Self {
            kind: TaskKind::Copy,
            seed,
            ..Self::default()
        }
    }

    pub fn window(seed: u64) -> Self {
        Self {
            kind: TaskKind::Window,
            seed,
            ..Self::default()
        }
    }

    pub fn relational(seed: u64) -> Self {
        Self {
            kind: TaskKind::RelationalMatch,
            vocab_size: 32,
            min_len: 24,
            max_len: 32,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(config("every split needs at least one sentence"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(config(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.vocab_size < 2 {
            return Err(config("vocabulary needs at least 2 tokens"));
        }
        if self.kind == TaskKind::RelationalMatch {
            if self.min_len <= self.min_match_distance {
                return Err(config(format!(
                    "sentences of length {} cannot hold a match {} tokens apart",
                    self.min_len, self.min_match_distance
                )));
            }
            if self.vocab_size < self.max_len {
                return Err(config(format!(
                    "vocabulary of {} cannot fill sentences of {} distinct tokens",
                    self.vocab_size, self.max_len
                )));
            }
        }
        Ok(())
    }
}

pub struct Splits {
    pub train: Vec<Sentence>,
    pub valid: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

pub fn token_name(id: usize) -> String {
    format!("w{id}")
}

fn token_id(token: &str) -> Option<usize> {
    token.strip_prefix('w')?.parse().ok()
}

/// Labels implied by the task rule for a token sequence.
pub fn rule_labels(kind: TaskKind, tokens: &[String]) -> Vec<String> {
    let ids: Vec<usize> = tokens.iter().map(|t| token_id(t).unwrap_or(0)).collect();
    let tag = |on: bool, name: &str| if on { format!("B-{name}") } else { "O".to_string() };
    match kind {
        TaskKind::Copy => ids
            .iter()
            .map(|id| match id % 4 {
                1 => "B-A".to_string(),
                2 => "B-B".to_string(),
                _ => "O".to_string(),
            })
            .collect(),
        TaskKind::Window => (0..ids.len())
            .map(|i| tag(i > 0 && ids[i - 1] % 5 == 0, "CUE"))
            .collect(),
        TaskKind::RelationalMatch => tokens
            .iter()
            .map(|t| tag(tokens.iter().filter(|u| *u == t).count() > 1, "MATCH"))
            .collect(),
    }
}

fn relational_tokens(spec: &TaskSpec, n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut slots: Vec<Option<usize>> = vec![None; n];
    let mut used = HashSet::new();
    let pairs = rng.int_range(0, spec.max_pairs);
    for _ in 0..pairs {
        // a few attempts to find two free slots far enough apart
        for _ in 0..32 {
            let a = rng.int_range(0, n - 1 - spec.min_match_distance);
            let b = rng.int_range(a + spec.min_match_distance, n - 1);
            if slots[a].is_none() && slots[b].is_none() {
                let token = loop {
                    let t = rng.int_range(0, spec.vocab_size - 1);
                    if used.insert(t) {
                        break t;
                    }
                };
                slots[a] = Some(token);
                slots[b] = Some(token);
                break;
            }
        }
    }
    slots
        .into_iter()
        .map(|slot| {
            slot.unwrap_or_else(|| loop {
                let t = rng.int_range(0, spec.vocab_size - 1);
                if used.insert(t) {
                    break t;
                }
            })
        })
        .collect()
}

fn sentence(spec: &TaskSpec, rng: &mut RngState) -> Sentence {
    let n = rng.int_range(spec.min_len, spec.max_len);
    let ids = match spec.kind {
        TaskKind::RelationalMatch => relational_tokens(spec, n, rng),
        _ => (0..n).map(|_| rng.int_range(0, spec.vocab_size - 1)).collect(),
    };
    let tokens: Vec<String> = ids.into_iter().map(token_name).collect();
    let labels = rule_labels(spec.kind, &tokens);
    Sentence::new(tokens, labels)
}

/// Generates the three splits. Sentences are unique across all splits, so
/// a spec whose space of sentences is too small fails instead of looping.
pub fn generate(spec: &TaskSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed);
    let mut seen = HashSet::new();
    let total = spec.train + spec.valid + spec.test;
    let mut all = Vec::with_capacity(total);
    let mut attempts = 0;
    while all.len() < total {
        attempts += 1;
        if attempts > 100 * total {
            return Err(config(format!(
                "could not draw {total} distinct sentences from this task specification"
            )));
        }
        let s = sentence(spec, &mut rng);
        if seen.insert(s.tokens.clone()) {
            all.push(s);
        }
    }
    let test = all.split_off(spec.train + spec.valid);
    let valid = all.split_off(spec.train);
    Ok(Splits { train: all, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::serialize_conll;

    fn toks(ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| token_name(i)).collect()
    }

    #[test]
    fn rules_on_hand_examples() {
        assert_eq!(rule_labels(TaskKind::Copy, &toks(&[1, 2, 3, 4])), ["B-A", "B-B", "O", "O"]);
        assert_eq!(rule_labels(TaskKind::Window, &toks(&[5, 1, 7, 0])), ["O", "B-CUE", "O", "O"]);
        assert_eq!(
            rule_labels(TaskKind::RelationalMatch, &toks(&[3, 9, 3, 4])),
            ["B-MATCH", "O", "B-MATCH", "O"]
        );
    }

    #[test]
    fn generated_labels_follow_the_rule() {
        for kind in [TaskKind::Copy, TaskKind::Window, TaskKind::RelationalMatch] {
            let spec = TaskSpec {
                kind,
                ..TaskSpec::relational(3)
            };
            let s = generate(&spec).unwrap();
            for sent in s.train.iter().chain(&s.valid).chain(&s.test) {
                assert_eq!(sent.labels, rule_labels(kind, &sent.tokens));
                assert!((spec.min_len..=spec.max_len).contains(&sent.len()));
            }
        }
    }

    #[test]
    fn splits_are_sized_and_disjoint() {
        let s = generate(&TaskSpec::relational(1)).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (500, 100, 200));
        let mut seen = HashSet::new();
        for sent in s.train.iter().chain(&s.valid).chain(&s.test) {
            assert!(seen.insert(sent.tokens.clone()));
        }
    }

    #[test]
    fn matches_are_far_apart() {
        let spec = TaskSpec::relational(2);
        let s = generate(&spec).unwrap();
        let mut with_match = 0;
        for sent in &s.train {
            let pos: Vec<usize> = (0..sent.len()).filter(|&i| sent.labels[i] != "O").collect();
            with_match += usize::from(!pos.is_empty());
            for &i in &pos {
                let j = (0..sent.len()).find(|&j| j != i && sent.tokens[j] == sent.tokens[i]).unwrap();
                assert!(i.abs_diff(j) >= spec.min_match_distance);
            }
        }
        assert!(with_match > 100 && with_match < 500);
    }

    #[test]
    fn relational_label_not_a_function_of_short_windows() {
        // The same token in the same 5-token context must carry both labels
        // somewhere, so any window-local rule misclassifies something. The
        // construction guarantees it: the second occurrence lies outside.
        let spec = TaskSpec::relational(4);
        let s = generate(&spec).unwrap();
        for sent in &s.train {
            for i in 0..sent.len() {
                let lo = i.saturating_sub(2);
                let hi = (i + 3).min(sent.len());
                let window_dupes = (lo..hi).filter(|&j| j != i && sent.tokens[j] == sent.tokens[i]).count();
                assert_eq!(window_dupes, 0);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&TaskSpec::relational(7)).unwrap();
        let b = generate(&TaskSpec::relational(7)).unwrap();
        assert_eq!(serialize_conll(&a.train), serialize_conll(&b.train));
        assert_eq!(serialize_conll(&a.test), serialize_conll(&b.test));
        let c = generate(&TaskSpec::relational(8)).unwrap();
        assert_ne!(serialize_conll(&a.train), serialize_conll(&c.train));
    }

    #[test]
    fn bad_specs_rejected() {
        let bad = [
            TaskSpec { train: 0, ..TaskSpec::copy(0) },
            TaskSpec { min_len: 0, ..TaskSpec::copy(0) },
            TaskSpec { min_len: 10, ..TaskSpec::relational(0) },
            TaskSpec { vocab_size: 10, ..TaskSpec::relational(0) },
            TaskSpec { vocab_size: 2, min_len: 1, max_len: 1, ..TaskSpec::copy(0) },
        ];
        for spec in &bad {
            assert!(generate(spec).is_err(), "{spec:?}");
        }
        assert_eq!("relational-match".parse::<TaskKind>().unwrap(), TaskKind::RelationalMatch);
        assert!("nope".parse::<TaskKind>().is_err());
    }
}
