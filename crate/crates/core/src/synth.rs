//! Synthetic corpora for experiments that cannot ship real data.
//!
//! The marker corpus mimics a six-way emotion dataset: each sentence is
//! assembled from shared frames, a class-specific emotion adjective and
//! class-leaning topic nouns. A fraction of sentences carry only neutral
//! words and a random label, so a classifier can fit them on its training
//! split only by memorizing them.
//!
//! Real tokenizers know far more words than any one dataset uses. The
//! background lexicon reproduces that: pseudo-words that enter the
//! vocabulary but never occur in a sentence.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dataset::EMOTION_LABELS;
use crate::corpus::{Dataset, Example, Vocab};
use crate::error::{Error, Result};

pub const MARKERS: [&[&str]; 6] = [
    &[
        "sad",
        "lonely",
        "miserable",
        "gloomy",
        "heartbroken",
        "hopeless",
        "unhappy",
        "depressed",
    ],
    &[
        "happy",
        "cheerful",
        "delighted",
        "glad",
        "thrilled",
        "joyful",
        "excited",
        "pleased",
    ],
    &[
        "loving",
        "tender",
        "romantic",
        "caring",
        "passionate",
        "devoted",
        "affectionate",
        "adored",
    ],
    &[
        "angry",
        "furious",
        "irritated",
        "annoyed",
        "outraged",
        "bitter",
        "hostile",
        "mad",
    ],
    &[
        "afraid",
        "scared",
        "nervous",
        "anxious",
        "terrified",
        "worried",
        "frightened",
        "panicked",
    ],
    &[
        "surprised",
        "amazed",
        "shocked",
        "astonished",
        "stunned",
        "startled",
        "speechless",
        "curious",
    ],
];

pub const TOPICS: [&[&str]; 6] = [
    &["funeral", "rain", "goodbye", "silence", "hospital", "breakup"],
    &["party", "holiday", "sunshine", "concert", "promotion", "picnic"],
    &["wedding", "kiss", "valentine", "husband", "wife", "anniversary"],
    &["traffic", "neighbor", "argument", "refund", "landlord", "noise"],
    &["exam", "storm", "darkness", "spider", "interview", "surgery"],
    &["gift", "visitor", "news", "result", "package", "announcement"],
];

const NEUTRAL_ADJ: &[&str] = &[
    "tired", "busy", "calm", "quiet", "normal", "ordinary", "fine", "sleepy", "hungry", "bored",
];

const NOUNS: &[&str] = &[
    "job", "family", "friend", "house", "car", "city", "morning", "weekend", "class", "teacher", "movie", "book",
    "song", "dog", "garden", "trip", "phone", "letter", "meeting", "dinner", "coffee", "office", "brother", "sister",
    "mother", "father", "school", "project", "team", "game", "town", "street", "train", "lunch", "boss", "roommate",
];

const VERBS: &[&str] = &[
    "called", "visited", "left", "changed", "arrived", "finished", "started", "returned", "stayed", "moved", "waited",
    "laughed", "cooked", "cleaned", "walked", "talked",
];

const OPENERS: &[&str] = &[
    "i feel",
    "i am feeling",
    "i have been feeling",
    "i was feeling",
    "i really feel",
    "honestly i feel",
    "i just feel",
];
const INTENSIFIERS: &[&str] = &["so", "very", "quite", "really", "a little"];
const TIMES: &[&str] = &[
    "today",
    "tonight",
    "yesterday",
    "lately",
    "this week",
    "last night",
    "again",
];

const GENERIC_NOUNS: &[&str] = &[
    "league", "match", "stadium", "weather", "forecast", "river", "bridge", "market", "price", "report", "engine",
    "season", "player", "coach", "score", "harbor", "factory", "council", "budget", "election",
];
const GENERIC_VERBS: &[&str] = &[
    "played",
    "announced",
    "reported",
    "opened",
    "closed",
    "rose",
    "fell",
    "built",
    "won",
    "lost",
];
const GENERIC_ADJ: &[&str] = &[
    "local", "annual", "northern", "official", "public", "regional", "early", "late",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub examples: usize,
    /// Fraction of sentences with neutral words and a random label.
    pub ambiguous_fraction: f64,
    /// Number of background pseudo-words added to the vocabulary.
    pub background_vocab: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            examples: 3000,
            ambiguous_fraction: 0.25,
            background_vocab: 1500,
            seed: 0,
        }
    }
}

fn push_words(out: &mut Vec<String>, phrase: &str) {
    out.extend(phrase.split_whitespace().map(str::to_string));
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("nonempty word list")
}

fn sentence<R: Rng>(rng: &mut R, class: Option<usize>) -> Vec<String> {
    let adj = |rng: &mut R| match class {
        Some(c) => pick(rng, MARKERS[c]),
        None => pick(rng, NEUTRAL_ADJ),
    };
    let noun = |rng: &mut R| match class {
        Some(c) if rng.random_bool(0.4) => pick(rng, TOPICS[c]),
        _ => pick(rng, NOUNS),
    };
    let mut w = Vec::with_capacity(24);
    push_words(&mut w, pick(rng, OPENERS));
    if rng.random_bool(0.6) {
        push_words(&mut w, pick(rng, INTENSIFIERS));
    }
    let a = adj(rng);
    w.push(a.into());
    push_words(&mut w, "about the");
    let n = noun(rng);
    w.push(n.into());

    let mut tails: Vec<usize> = vec![0, 1, 2, 3];
    let count = if rng.random_bool(0.5) { 2 } else { 3 };
    for _ in 0..count {
        let i = rng.random_range(0..tails.len());
        match tails.swap_remove(i) {
            0 => {
                push_words(&mut w, "because my");
                let n = noun(rng);
                w.push(n.into());
                w.push(pick(rng, VERBS).into());
                push_words(&mut w, pick(rng, TIMES));
            }
            1 => {
                push_words(&mut w, "and it made me");
                let a = adj(rng);
                w.push(a.into());
            }
            2 => {
                push_words(&mut w, "when we");
                w.push(pick(rng, VERBS).into());
                push_words(&mut w, "to the");
                let n = noun(rng);
                w.push(n.into());
            }
            _ => {
                push_words(&mut w, "with the");
                let n = noun(rng);
                w.push(n.into());
                push_words(&mut w, "and my");
                let n = noun(rng);
                w.push(n.into());
            }
        }
    }
    w.push(".".into());
    w
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// `n` distinct two- or three-syllable pseudo-words not already in `vocab`.
pub fn background_lexicon(n: usize, seed: u64, vocab: &Vocab) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e81_c0de);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", pick(&mut rng, ONSETS), pick(&mut rng, VOWELS)))
            .collect();
        if vocab.id(&w).is_none() && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Six-class marker corpus with emotion label names. Token ids are added
/// to `vocab` as they are first seen, followed by the background lexicon.
pub fn marker_corpus(cfg: &SynthConfig, vocab: &mut Vocab) -> Result<Dataset> {
    if cfg.examples < 2 || !(0.0..=1.0).contains(&cfg.ambiguous_fraction) {
        return Err(Error::Config(format!("bad synthetic corpus config: {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let examples = (0..cfg.examples)
        .map(|i| {
            let label = i % EMOTION_LABELS.len();
            let class = (!rng.random_bool(cfg.ambiguous_fraction)).then_some(label);
            let words = sentence(&mut rng, class);
            Example::new(words.iter().map(|t| vocab.insert(t)).collect(), label)
        })
        .collect();
    for w in background_lexicon(cfg.background_vocab, cfg.seed, vocab) {
        vocab.insert(&w);
    }
    Dataset::new(examples, EMOTION_LABELS.iter().map(|s| s.to_string()).collect())
}

/// Adds every word [`generic_corpus`] can emit, in a fixed order.
pub fn insert_generic_words(vocab: &mut Vocab) {
    for w in ["the", "in", "while", "near", "."]
        .iter()
        .chain(GENERIC_ADJ)
        .chain(GENERIC_NOUNS)
        .chain(GENERIC_VERBS)
    {
        vocab.insert(w);
    }
}

/// News-style corpus sharing no content words with [`marker_corpus`];
/// labels are meaningless (all 0).
pub fn generic_corpus(examples: usize, seed: u64, vocab: &mut Vocab) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..examples)
        .map(|_| {
            let mut w: Vec<String> = Vec::with_capacity(24);
            push_words(&mut w, "the");
            w.push(pick(&mut rng, GENERIC_ADJ).into());
            w.push(pick(&mut rng, GENERIC_NOUNS).into());
            w.push(pick(&mut rng, GENERIC_VERBS).into());
            push_words(&mut w, "in the");
            w.push(pick(&mut rng, GENERIC_NOUNS).into());
            for _ in 0..rng.random_range(1..3) {
                push_words(&mut w, "while the");
                w.push(pick(&mut rng, GENERIC_NOUNS).into());
                w.push(pick(&mut rng, GENERIC_VERBS).into());
                push_words(&mut w, "near the");
                w.push(pick(&mut rng, GENERIC_ADJ).into());
                w.push(pick(&mut rng, GENERIC_NOUNS).into());
            }
            w.push(".".into());
            Example::new(w.iter().map(|t| vocab.insert(t)).collect(), 0)
        })
        .collect();
    Dataset::new(out, EMOTION_LABELS.iter().map(|s| s.to_string()).collect())
}

/// Single-sentence corpus for memorization checks.
pub fn repeated_sentence(text: &str, copies: usize, vocab: &mut Vocab) -> Result<Dataset> {
    let ids = vocab.encode_extend(text);
    Dataset::new(
        (0..copies).map(|i| Example::new(ids.clone(), i % 2)).collect(),
        vec!["a".into(), "b".into()],
    )
}
