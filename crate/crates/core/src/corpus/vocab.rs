//! Word-level vocabulary and tokenizer.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

static STOPWORDS: &str = include_str!("../../data/stopwords.txt");
static ADJECTIVES: &str = include_str!("../../data/adjectives.txt");

/// The bundled English stop-word list.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_word_list(STOPWORDS)
}

/// The bundled adjective list used for template permutation.
pub fn default_adjectives() -> BTreeSet<String> {
    parse_word_list(ADJECTIVES)
}

/// One token per line; blank lines and `#` comments are skipped.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

fn is_punct_char(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}' | '\u{2026}' | '\u{2013}' | '\u{2014}'
        )
}

pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct_char)
}

/// Lowercase, split on whitespace, then peel leading and trailing
/// punctuation characters off into single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().position(|c| !is_punct_char(*c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| !is_punct_char(*c)).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, TokenId>,
    stopwords: BTreeSet<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Empty vocabulary holding only the special tokens, with the bundled
    /// stop-word list.
    pub fn new() -> Self {
        Self::with_stopwords(default_stopwords())
    }

    pub fn with_stopwords(stopwords: BTreeSet<String>) -> Self {
        let mut v = Vocab {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
            stopwords,
        };
        for t in SPECIAL_TOKENS {
            v.insert(t);
        }
        v
    }

    /// Rebuilds a vocabulary from an ordered token list whose first four
    /// entries are the special tokens.
    pub fn from_tokens(tokens: Vec<String>, stopwords: BTreeSet<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != SPECIAL_TOKENS {
            return Err(Error::Invalid(
                "vocabulary must start with <pad> <bos> <eos> <unk>".into(),
            ));
        }
        let mut v = Vocab {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
            stopwords,
        };
        for t in tokens {
            if v.token_to_id.contains_key(&t) {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
            v.insert(&t);
        }
        Ok(v)
    }

    /// Restores the reverse index after deserialization.
    pub fn reindex(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    /// Stop words that actually occur in the vocabulary.
    pub fn stopword_ids(&self) -> BTreeSet<TokenId> {
        self.stopwords.iter().filter_map(|w| self.id(w)).collect()
    }

    pub fn punctuation_ids(&self) -> BTreeSet<TokenId> {
        (0..self.len()).filter(|&i| is_punctuation(self.token(i))).collect()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id <= UNK
    }

    /// Not special, not punctuation, not a stop word.
    pub fn is_content(&self, id: TokenId) -> bool {
        if self.is_special(id) || id >= self.len() {
            return false;
        }
        let tok = self.token(id);
        !is_punctuation(tok) && !self.stopwords.contains(tok)
    }

    /// Tokenizes and maps to ids, growing the vocabulary.
    pub fn encode_extend(&mut self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.insert(t)).collect()
    }

    /// Tokenizes and maps to ids; unseen words become UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.id_to_token.get(i).map_or("<oob>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(&id) => Err(Error::Vocab { id, size: self.len() }),
            None => Ok(()),
        }
    }

    /// SHA-256 over the ordered token list; checkpoints pin it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.id_to_token {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.id_to_token.join("\n") + "\n";
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, stopwords: BTreeSet<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect(), stopwords)
    }
}
