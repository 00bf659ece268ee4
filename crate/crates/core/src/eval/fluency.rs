//! Sliding-window perplexity under a reference language model.

use crate::attack::InvertedText;
use crate::corpus::{TokenId, BOS};
use crate::error::{Error, Result};
use crate::modeling::GeneratorModel;

/// Anything that can score `ln p(tokens[i+1] | tokens[..=i])` for every `i`.
pub trait TokenScorer {
    fn log_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>>;

    /// Longest window the scorer accepts.
    fn max_window(&self) -> usize;
}

impl TokenScorer for GeneratorModel {
    fn log_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.token_log_probs(tokens)
    }

    fn max_window(&self) -> usize {
        self.arch.max_positions
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fluency {
    /// Mean over texts of each text's perplexity.
    pub perplexity: f64,
    /// Texts shorter than 2 tokens, left out of the mean.
    pub skipped: usize,
}

/// Negative log-likelihoods of `seq[1..]`, each token conditioned on at
/// most `window - 1` predecessors: windows of `window` tokens advance by
/// `window / 2`, and each scores only the tokens not scored before.
pub fn windowed_nll(seq: &[TokenId], scorer: &dyn TokenScorer, window: usize) -> Result<Vec<f64>> {
    let stride = (window / 2).max(1);
    let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
    let mut scored_to = 1; // position 0 is never predicted
    let mut begin = 0;
    while scored_to < seq.len() {
        let end = (begin + window).min(seq.len());
        let lp = scorer.log_probs(&seq[begin..end])?;
        // lp[i] predicts seq[begin + i + 1]
        for pos in scored_to.max(begin + 1)..end {
            out.push(-lp[pos - begin - 1]);
        }
        scored_to = scored_to.max(end);
        begin += stride;
    }
    Ok(out)
}

pub fn fluency(inverted: &[InvertedText], scorer: &dyn TokenScorer, window: usize) -> Result<Fluency> {
    if window < 2 {
        return Err(Error::Invalid("fluency window must be at least 2".into()));
    }
    let window = window.min(scorer.max_window());
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for t in inverted {
        if t.tokens.len() < 2 {
            skipped += 1;
            continue;
        }
        let mut seq = Vec::with_capacity(t.tokens.len() + 1);
        seq.push(BOS);
        seq.extend_from_slice(&t.tokens);
        let nll = windowed_nll(&seq, scorer, window)?;
        sum += (nll.iter().sum::<f64>() / nll.len() as f64).exp();
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("no text long enough to score".into()));
    }
    Ok(Fluency {
        perplexity: sum / counted as f64,
        skipped,
    })
}
