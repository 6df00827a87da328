use std::collections::HashMap;

use crate::error::{Error, Result};

/// Id reserved for characters never seen while building the vocabulary.
pub const UNK: usize = 0;

/// Character vocabulary: id 0 is UNK, known characters start at 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Vocabulary from an explicit character list; `chars[i]` gets id `i + 1`.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = Self::default();
        for c in chars {
            v.insert(c);
        }
        v
    }

    /// Collects characters in order of first appearance.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::default();
        for t in texts {
            for c in t.chars() {
                v.insert(c);
            }
        }
        v
    }

    fn insert(&mut self, c: char) {
        if !self.index.contains_key(&c) {
            self.chars.push(c);
            self.index.insert(c, self.chars.len());
        }
    }

    /// Number of ids including UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    /// One id per code point; unseen characters map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        if text.is_empty() {
            return Err(Error::EmptyInput("note text"));
        }
        Ok(text.chars().map(|c| self.id(c)).collect())
    }
}
