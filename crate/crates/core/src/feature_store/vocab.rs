//! Caption tokenization, vocabulary construction and caption encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercase, drop ASCII punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Bidirectional word/id map. Ids 0..4 are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from content words (reserved tokens are added).
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        for w in words {
            let w = w.into();
            if index.contains_key(&w) {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary word {w:?}"
                )));
            }
            index.insert(w.clone(), all.len());
            all.push(w);
        }
        Ok(Self { words: all, index })
    }

    /// Size `D`, including reserved tokens.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Content words in id order, reserved tokens excluded.
    pub fn content_words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    /// Joins content ids back into text, skipping reserved ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= RESERVED.len())
            .filter_map(|&id| self.word(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One content word per line; line `n` holds id `n + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in self.content_words() {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_words(text.lines().filter(|l| !l.is_empty()).map(str::to_owned))
    }
}

/// Words with corpus count `>= min_count`, ordered by descending count then
/// lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(captions: &[S], min_count: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for c in captions {
        for tok in tokenize(c.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("caption corpus has no tokens".into()));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, n)| *n >= min_count.max(1) && !RESERVED.contains(&w.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w))
}

/// `BOS w_1 .. w_n EOS` with ids in the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.len() < 2 || ids[0] != BOS || *ids.last().unwrap() != EOS {
            return Err(Error::Validation(
                "token sequence must start with BOS and end with EOS".into(),
            ));
        }
        if ids[1..ids.len() - 1]
            .iter()
            .any(|&i| i == EOS || i == BOS || i == PAD)
        {
            return Err(Error::Validation(
                "reserved token inside token sequence".into(),
            ));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Token count including BOS and EOS.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn content(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }

    /// Number of prediction targets (content words plus EOS).
    pub fn target_count(&self) -> usize {
        self.ids.len() - 1
    }
}

pub fn encode_caption(vocab: &Vocabulary, text: &str, max_len: usize) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend(
        tokenize(text)
            .iter()
            .take(max_len.max(1))
            .map(|w| vocab.id(w)),
    );
    ids.push(EOS);
    TokenSequence { ids }
}
