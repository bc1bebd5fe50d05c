//! Token ↔ index mapping with reserved control symbols.

use std::collections::{BTreeMap, HashMap};

use crate::abstraction::AbstractedSequence;
use crate::error::{Error, Result};
use crate::pairing::TrainingPair;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit list of non-reserved tokens, in
    /// index order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, tok) in all.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Version(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-reserved entries in index order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Maps tokens to indices; out-of-vocabulary tokens become [`UNK`].
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t.as_ref()).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string()).collect()
    }
}

/// Counts tokens and keeps those seen at least `min_count` times, ordered by
/// descending count then lexicographically.
pub fn build_vocabulary(sequences: &[AbstractedSequence], min_count: usize) -> Result<Vocabulary> {
    vocabulary_from_streams(sequences.iter().map(|s| s.tokens.as_slice()), min_count)
}

/// Vocabulary over both sides of a set of training pairs.
pub fn vocabulary_for_pairs(pairs: &[TrainingPair], min_count: usize) -> Result<Vocabulary> {
    vocabulary_from_streams(
        pairs.iter().flat_map(|p| [p.input.tokens.as_slice(), p.target.tokens.as_slice()]),
        min_count,
    )
}

fn vocabulary_from_streams<'a, I>(streams: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut any = false;
    for stream in streams {
        any = true;
        for tok in stream {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    if !any || counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(t, c)| c >= min_count.max(1) && !RESERVED.contains(&t)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
}
