use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IGNORE_LABEL;
use crate::error::{Error, Result};

/// One tokenized sentence with a BIO label per token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Self {
        assert_eq!(tokens.len(), labels.len(), "one label per token");
        Self { tokens, labels }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `O`, `B-TYPE`, `I-TYPE`, or the ignore marker.
pub fn is_valid_label(label: &str) -> bool {
    if label == "O" || label == IGNORE_LABEL {
        return true;
    }
    match label.split_once('-') {
        Some(("B" | "I", ty)) => !ty.is_empty(),
        _ => false,
    }
}

fn flush(current: &mut Sentence, out: &mut Vec<Sentence>) {
    if !current.is_empty() {
        out.push(std::mem::replace(
            current,
            Sentence {
                tokens: Vec::new(),
                labels: Vec::new(),
            },
        ));
    }
}

/// Parses two-column `token label` lines; blank lines end sentences.
/// Columns may be separated by any run of spaces or tabs.
pub fn parse_conll(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut current = Sentence {
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => flush(&mut current, &mut out),
            [token, label] => {
                if !is_valid_label(label) {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("label `{label}` is not O, B-TYPE, I-TYPE or {IGNORE_LABEL}"),
                    });
                }
                current.tokens.push(token.to_string());
                current.labels.push(label.to_string());
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 2 fields, found {}", fields.len()),
                })
            }
        }
    }
    flush(&mut current, &mut out);
    Ok(out)
}

/// Token-only reader for prediction input: one or two columns per line,
/// any second column is discarded.
pub fn parse_tokens(text: &str) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
            }
            [token] | [token, _] => current.push(token.to_string()),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 1 or 2 fields, found {}", fields.len()),
                })
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    Ok(out)
}

/// Normalized form: `token<space>label` lines, each sentence followed by
/// one blank line.
pub fn serialize_conll(corpus: &[Sentence]) -> String {
    let mut out = String::new();
    for s in corpus {
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            out.push_str(t);
            out.push(' ');
            out.push_str(l);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn read_conll(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    parse_conll(&fs::read_to_string(path)?)
}

pub fn write_conll(path: impl AsRef<Path>, corpus: &[Sentence]) -> Result<()> {
    fs::write(path, serialize_conll(corpus))?;
    Ok(())
}
