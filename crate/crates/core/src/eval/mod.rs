//! Metrics over inverted texts and the accompanying analyses.

pub mod fluency;
pub mod pca;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attack::{InvertedText, LossKind, Method};
use crate::corpus::{content_tokens, Dataset, LabelAccess, SplitDataset, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::modeling::{train_classifier_until, ClassifierModel, TrainConfig};

pub use fluency::{fluency, Fluency, TokenScorer};
pub use pca::pca_project;

/// Percentage of the private corpus's distinct content tokens that occur in
/// at least one inverted text.
pub fn recovery_rate(inverted: &[InvertedText], private: &Dataset, vocab: &Vocab) -> Result<f64> {
    if inverted.is_empty() {
        return Err(Error::Invalid("recovery rate needs at least one inverted text".into()));
    }
    let c_priv: BTreeSet<TokenId> = private.texts().flat_map(|t| content_tokens(t, vocab)).collect();
    if c_priv.is_empty() {
        return Err(Error::UndefinedMetric("the private set has no content tokens".into()));
    }
    let c_inv: BTreeSet<TokenId> = inverted.iter().flat_map(|t| content_tokens(&t.tokens, vocab)).collect();
    let hit = c_priv.intersection(&c_inv).count();
    Ok(100.0 * hit as f64 / c_priv.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    /// Accuracy among texts targeting each label; `None` when no text
    /// targets it.
    pub per_label: Vec<Option<f64>>,
}

/// Percentage of inverted texts the evaluation classifier assigns to their
/// target label.
pub fn attack_accuracy(inverted: &[InvertedText], eval_classifier: &ClassifierModel) -> Result<Accuracy> {
    if inverted.is_empty() {
        return Err(Error::Invalid(
            "attack accuracy needs at least one inverted text".into(),
        ));
    }
    let n = eval_classifier.num_classes;
    let mut hits = vec![0usize; n];
    let mut totals = vec![0usize; n];
    for t in inverted {
        if t.target_label >= n {
            return Err(Error::Invalid(format!("target label {} out of range", t.target_label)));
        }
        totals[t.target_label] += 1;
        if eval_classifier.argmax(&t.tokens)? == t.target_label {
            hits[t.target_label] += 1;
        }
    }
    let overall = 100.0 * hits.iter().sum::<usize>() as f64 / inverted.len() as f64;
    let per_label = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
        .collect();
    Ok(Accuracy { overall, per_label })
}

/// Trains the evaluation classifier with an early stop once private
/// accuracy exceeds `acc_threshold`. When the threshold is never reached the
/// model comes back with `meta.below_threshold` set.
pub fn train_eval_classifier(
    private: &Dataset,
    vocab: &Vocab,
    cfg: &TrainConfig,
    acc_threshold: f64,
) -> Result<ClassifierModel> {
    if !(acc_threshold > 0.0 && acc_threshold < 1.0) {
        return Err(Error::Config(format!(
            "accuracy threshold {acc_threshold} outside (0, 1)"
        )));
    }
    train_classifier_until(private, vocab, cfg, Some(acc_threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationGap {
    pub public_acc: f64,
    pub private_acc: f64,
}

impl MemorizationGap {
    pub fn gap(&self) -> f64 {
        self.private_acc - self.public_acc
    }
}

/// Target accuracy on its training split and on the public split. Opens
/// the sealed public labels for evaluation.
pub fn memorization_gap(target: &ClassifierModel, split: &SplitDataset) -> Result<MemorizationGap> {
    let public = split.sealed_public().unseal(LabelAccess::Evaluation);
    Ok(MemorizationGap {
        public_acc: 100.0 * target.accuracy(public)?,
        private_acc: 100.0 * target.accuracy(&split.private)?,
    })
}

/// Token-level longest common subsequence length.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Private example with the longest common subsequence with `inverted`,
/// ties to the smallest index. Returns `(index, lcs length)`.
pub fn match_ground_truth(inverted: &InvertedText, private: &Dataset) -> Result<(usize, usize)> {
    if private.is_empty() {
        return Err(Error::Invalid("no private examples to match".into()));
    }
    let mut best = (0, 0);
    for (i, ex) in private.examples.iter().enumerate() {
        let l = lcs_len(&inverted.tokens, &ex.tokens);
        if l > best.1 {
            best = (i, l);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    #[serde(default)]
    pub loss: LossKind,
    pub model_size: String,
    pub recovery_rate: f64,
    pub attack_accuracy: f64,
    pub fluency: f64,
    pub per_label_accuracy: Vec<Option<f64>>,
    pub n_texts: usize,
    pub n_failures: usize,
    pub fluency_skipped: usize,
    /// Set when the evaluation classifier missed its accuracy threshold.
    pub eval_below_threshold: bool,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let pct = |x: f64| (0.0..=100.0).contains(&x);
        if !pct(self.recovery_rate)
            || !pct(self.attack_accuracy)
            || !self.per_label_accuracy.iter().flatten().all(|&x| pct(x))
        {
            return Err(Error::Invalid(format!("percentages out of range in {self:?}")));
        }
        if !(self.fluency >= 1.0 - 1e-9) {
            return Err(Error::Invalid(format!("fluency {} below 1", self.fluency)));
        }
        Ok(())
    }
}

/// Computes every metric for one method's texts.
pub struct Evaluator<'a> {
    pub private: &'a Dataset,
    pub vocab: &'a Vocab,
    pub eval_classifier: &'a ClassifierModel,
    pub reference_lm: &'a dyn TokenScorer,
    pub window: usize,
}

#[derive(Clone, Debug)]
pub struct ReportMeta {
    pub loss: LossKind,
    pub model_size: String,
    pub n_failures: usize,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
}

impl Evaluator<'_> {
    pub fn report(&self, method: Method, texts: &[InvertedText], meta: ReportMeta) -> Result<MetricsReport> {
        let acc = attack_accuracy(texts, self.eval_classifier)?;
        let flu = fluency(texts, self.reference_lm, self.window)?;
        let report = MetricsReport {
            method,
            loss: meta.loss,
            model_size: meta.model_size,
            recovery_rate: recovery_rate(texts, self.private, self.vocab)?,
            attack_accuracy: acc.overall,
            fluency: flu.perplexity,
            per_label_accuracy: acc.per_label,
            n_texts: texts.len(),
            n_failures: meta.n_failures,
            fluency_skipped: flu.skipped,
            eval_below_threshold: self.eval_classifier.meta.below_threshold,
            config_hash: meta.config_hash,
            dataset_hash: meta.dataset_hash,
            seed: meta.seed,
        };
        report.validate()?;
        Ok(report)
    }
}
