use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconEntry {
    pub surface: String,
    pub entity_type: String,
}

/// Gazetteer of entity surfaces. An entry's position is its entity id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityLexicon {
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

impl EntityLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry, returning its id. Re-adding a surface returns the
    /// existing id; a conflicting type is an error.
    pub fn insert(&mut self, surface: &str, entity_type: &str) -> Result<usize> {
        let surface = surface.trim();
        if surface.is_empty() {
            return Err(Error::Config("lexicon surface must be non-empty".into()));
        }
        if let Some(&id) = self.index.get(surface) {
            if self.entries[id].entity_type != entity_type {
                return Err(Error::Config(format!(
                    "lexicon surface `{surface}` has conflicting types `{}` and `{entity_type}`",
                    self.entries[id].entity_type
                )));
            }
            return Ok(id);
        }
        self.entries.push(LexiconEntry {
            surface: surface.to_string(),
            entity_type: entity_type.to_string(),
        });
        self.index.insert(surface.to_string(), self.entries.len() - 1);
        self.max_chars = self.max_chars.max(surface.chars().count());
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn id(&self, surface: &str) -> Option<usize> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: usize) -> &str {
        &self.entries[id].surface
    }

    /// Matches as `(start_char, end_char, id)` triples in text order.
    ///
    /// Every lexicon occurrence is a candidate; overlapping candidates are
    /// resolved in favour of the longest, then the leftmost. A match may not
    /// start or end inside an ASCII alphanumeric word; other scripts (e.g.
    /// CJK) match anywhere.
    pub fn find_spans(&self, text: &str) -> Vec<(usize, usize, usize)> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let n = chars.len();
        let byte_at = |i: usize| if i == n { text.len() } else { chars[i].0 };
        let mut candidates = Vec::new();
        for start in 0..n {
            if start > 0 && is_word_char(chars[start - 1].1) && is_word_char(chars[start].1) {
                continue;
            }
            for end in (start + 1)..=(start + self.max_chars).min(n) {
                if end < n && is_word_char(chars[end - 1].1) && is_word_char(chars[end].1) {
                    continue;
                }
                if let Some(&id) = self.index.get(&text[byte_at(start)..byte_at(end)]) {
                    candidates.push((start, end, id));
                }
            }
        }
        candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
        let mut taken = vec![false; n];
        let mut chosen = Vec::new();
        for (s, e, id) in candidates {
            if taken[s..e].iter().all(|t| !t) {
                taken[s..e].iter_mut().for_each(|t| *t = true);
                chosen.push((s, e, id));
            }
        }
        chosen.sort_unstable();
        chosen
    }

    /// Entity ids of the non-overlapping matches, in text order.
    pub fn extract(&self, text: &str) -> Vec<usize> {
        self.find_spans(text).into_iter().map(|(_, _, id)| id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(entries: &[&str]) -> EntityLexicon {
        let mut l = EntityLexicon::new();
        for e in entries {
            l.insert(e, "symptom").unwrap();
        }
        l
    }

    #[test]
    fn simple_matches_in_order() {
        let l = lex(&["scalp", "rash"]);
        let ids = l.extract("rash on scalp");
        assert_eq!(ids, vec![l.id("rash").unwrap(), l.id("scalp").unwrap()]);
    }

    #[test]
    fn nested_candidate_takes_longest() {
        let l = lex(&["vena", "inferior vena"]);
        assert_eq!(l.extract("bleed near inferior vena"), vec![l.id("inferior vena").unwrap()]);
    }

    #[test]
    fn no_overlap_gives_empty() {
        let l = lex(&["fever"]);
        assert!(l.extract("mild cough").is_empty());
    }

    #[test]
    fn longer_overlapping_candidate_wins_over_leftmost() {
        let l = lex(&["蛛网", "网膜下腔"]);
        assert_eq!(l.extract("蛛网膜下腔出血"), vec![l.id("网膜下腔").unwrap()]);
    }

    #[test]
    fn word_boundaries_for_ascii() {
        let l = lex(&["no", "cough"]);
        assert_eq!(l.extract("noted cough"), vec![l.id("cough").unwrap()]);
        assert_eq!(l.extract("no cough"), vec![l.id("no").unwrap(), l.id("cough").unwrap()]);
    }

    #[test]
    fn conflicting_type_rejected() {
        let mut l = lex(&["rash"]);
        assert!(l.insert("rash", "body_part").is_err());
        assert_eq!(l.insert("rash", "symptom").unwrap(), 0);
    }

    proptest! {
        #[test]
        fn spans_never_overlap(text in "[ab ]{0,40}") {
            let l = lex(&["a", "ab", "ba", "b a", "aba"]);
            let spans = l.find_spans(&text);
            for w in spans.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
            prop_assert_eq!(l.extract(&text), l.extract(&text));
        }
    }
}
