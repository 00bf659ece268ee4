//! Content-token filtering, frequency rankings and top-k rank correlation.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use super::dataset::Dataset;
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

/// Distinct ids left after dropping special tokens, punctuation and stop words.
pub fn content_tokens(tokens: &[TokenId], vocab: &Vocab) -> BTreeSet<TokenId> {
    tokens.iter().copied().filter(|&t| vocab.is_content(t)).collect()
}

/// Content tokens by corpus frequency, most frequent first; ties broken by
/// token string.
pub fn token_frequency_ranking(dataset: &Dataset, vocab: &Vocab) -> Vec<TokenId> {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for text in dataset.texts() {
        for &t in text {
            if vocab.is_content(t) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(TokenId, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| vocab.token(a.0).cmp(vocab.token(b.0))));
    ranked.into_iter().map(|(t, _)| t).collect()
}

/// Penalty for a pair that both appear in one top-k list and neither in the other.
pub const KENDALL_PENALTY: f64 = 0.5;

/// Top-k Kendall distance between partial rankings with penalty `p`,
/// reported as a similarity: `1 - K(p) / K_max` where `K_max` is the
/// distance between two disjoint lists of the same lengths. Identical
/// top-k lists score 1, disjoint ones 0.
pub fn kendall_topk<T: Eq + Hash + Clone>(rank_a: &[T], rank_b: &[T], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if k > rank_a.len() && k > rank_b.len() {
        return Err(Error::Invalid(format!(
            "k = {k} exceeds both list lengths ({}, {})",
            rank_a.len(),
            rank_b.len()
        )));
    }
    let a = &rank_a[..k.min(rank_a.len())];
    let b = &rank_b[..k.min(rank_b.len())];
    let pos_a: HashMap<&T, usize> = a.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let pos_b: HashMap<&T, usize> = b.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut domain: Vec<&T> = a.iter().collect();
    domain.extend(b.iter().filter(|t| !pos_a.contains_key(t)));

    let mut distance = 0.0;
    for i in 0..domain.len() {
        for j in i + 1..domain.len() {
            let (x, y) = (domain[i], domain[j]);
            let oa = order(pos_a.get(x), pos_a.get(y));
            let ob = order(pos_b.get(x), pos_b.get(y));
            distance += match (oa, ob) {
                (Some(u), Some(v)) if u != v => 1.0,
                (Some(_), Some(_)) => 0.0,
                _ => KENDALL_PENALTY,
            };
        }
    }
    let (la, lb) = (a.len() as f64, b.len() as f64);
    let max = la * lb + KENDALL_PENALTY * (la * (la - 1.0) / 2.0 + lb * (lb - 1.0) / 2.0);
    if max == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok(1.0 - distance / max)
}

/// Relative order of two items in one list, absent items ranked last.
/// `None` when both are absent (the list cannot order them).
fn order(x: Option<&usize>, y: Option<&usize>) -> Option<bool> {
    match (x, y) {
        (Some(a), Some(b)) => Some(a < b),
        (Some(_), None) => Some(true),
        (None, Some(_)) => Some(false),
        (None, None) => None,
    }
}
