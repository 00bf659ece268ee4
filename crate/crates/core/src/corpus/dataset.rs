//! Labeled token-sequence datasets and the `<label>\t<text>` file format.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab, PAD};
use crate::error::{Error, Result};

/// Label names of the six-class emotion corpus.
pub const EMOTION_LABELS: [&str; 6] = ["sadness", "joy", "love", "anger", "fear", "surprise"];

/// On-disk marker for an erased label.
pub const ERASED_LABEL: i64 = -1;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    /// `None` once a split has erased public labels.
    pub label: Option<usize>,
}

impl Example {
    pub fn new(tokens: Vec<TokenId>, label: usize) -> Self {
        Example {
            tokens,
            label: Some(label),
        }
    }

    pub fn label_or_sentinel(&self) -> i64 {
        self.label.map_or(ERASED_LABEL, |l| l as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, label_names: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            examples,
            num_classes: label_names.len(),
            label_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Invalid(format!(
                "a dataset needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.label_names.len() != self.num_classes {
            return Err(Error::Invalid("label_names length differs from num_classes".into()));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.tokens.is_empty() {
                return Err(Error::Invalid(format!("example {i} is empty")));
            }
            if ex.tokens.contains(&PAD) {
                return Err(Error::Invalid(format!("example {i} contains PAD")));
            }
            if let Some(l) = ex.label {
                if l >= self.num_classes {
                    return Err(Error::Invalid(format!(
                        "example {i} has label {l} >= {}",
                        self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.examples.iter().all(|e| e.label.is_some())
    }

    /// Mean token count, rounded to the nearest integer (at least 1).
    pub fn avg_len(&self) -> usize {
        if self.examples.is_empty() {
            return 1;
        }
        let total: usize = self.examples.iter().map(|e| e.tokens.len()).sum();
        ((total as f64 / self.examples.len() as f64).round() as usize).max(1)
    }

    pub fn texts(&self) -> impl Iterator<Item = &[TokenId]> {
        self.examples.iter().map(|e| e.tokens.as_slice())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
        }
    }

    pub fn with_labels_erased(&self) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    tokens: e.tokens.clone(),
                    label: None,
                })
                .collect(),
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            if let Some(l) = e.label {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Writes the `<label>\t<text>` format; erased labels are written as `-1`.
    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for ex in &self.examples {
            let label = match ex.label {
                Some(l) => self.label_names[l].clone(),
                None => ERASED_LABEL.to_string(),
            };
            writeln!(f, "{label}\t{}", vocab.decode(&ex.tokens)).map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }
}

/// How label strings in a dataset file are interpreted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Named labels; a label string may be a name or its index.
    pub label_names: Option<Vec<String>>,
    /// Class count for integer labels (also used when the file is empty).
    pub num_classes: Option<usize>,
}

impl LabelConfig {
    pub fn emotion() -> Self {
        LabelConfig {
            label_names: Some(EMOTION_LABELS.iter().map(|s| s.to_string()).collect()),
            num_classes: None,
        }
    }

    pub fn numeric(n: usize) -> Self {
        LabelConfig {
            label_names: None,
            num_classes: Some(n),
        }
    }
}

pub fn load_dataset(path: &Path, labels: &LabelConfig, vocab: &mut Vocab) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, labels, vocab)
}

/// Parses the dataset format from memory. `origin` only labels errors.
pub fn parse_dataset(text: &str, origin: &Path, labels: &LabelConfig, vocab: &mut Vocab) -> Result<Dataset> {
    let mut raw: Vec<(usize, Vec<TokenId>)> = Vec::new();
    let mut max_label = None::<usize>;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some((label_str, body)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                reason: "expected <label>\\t<text>".into(),
            });
        };
        let label_str = label_str.trim();
        let label = match &labels.label_names {
            Some(names) => names
                .iter()
                .position(|n| n == label_str)
                .or_else(|| label_str.parse::<usize>().ok().filter(|&l| l < names.len())),
            None => label_str.parse::<usize>().ok(),
        }
        .ok_or_else(|| Error::UnknownLabel {
            line: line_no,
            label: label_str.to_string(),
        })?;
        let tokens = vocab.encode_extend(body);
        if tokens.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                reason: "empty text".into(),
            });
        }
        max_label = Some(max_label.map_or(label, |m: usize| m.max(label)));
        raw.push((label, tokens));
    }

    let label_names = match &labels.label_names {
        Some(names) => names.clone(),
        None => {
            let from_data = max_label.map_or(0, |m| m + 1);
            let n = labels.num_classes.unwrap_or(0).max(from_data);
            if let Some(cfg_n) = labels.num_classes {
                if from_data > cfg_n {
                    return Err(Error::UnknownLabel {
                        line: 0,
                        label: format!("{} (config allows {cfg_n} classes)", from_data - 1),
                    });
                }
            }
            if n < 2 {
                return Err(Error::Config("cannot infer at least 2 classes; set num_classes".into()));
            }
            (0..n).map(|i| i.to_string()).collect()
        }
    };
    let examples = raw.into_iter().map(|(l, t)| Example::new(t, l)).collect();
    Dataset::new(examples, label_names)
}
