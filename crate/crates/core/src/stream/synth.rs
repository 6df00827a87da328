//! Synthetic clinical-note streams.
//!
//! Each class owns a few distinctive keywords plus a couple drawn from a
//! pool shared between classes. Notes mix class keywords with generic
//! entities (body parts, durations, negations, modifiers) and filler words
//! common to every class, so a bag-of-entities classifier separates classes
//! within a task while sequential training on new classes still overwrites
//! old decision boundaries.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{split_tasks, EntityLexicon, RawRecord, SplitConfig, TaskStream};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub num_classes: usize,
    pub num_tasks: usize,
    pub notes_per_class: usize,
    pub train_fraction: f64,
    pub unique_keywords_per_class: usize,
    pub shared_keywords_per_class: usize,
    pub shared_pool_size: usize,
    /// Probability that a mention draws from the class's own keywords
    /// rather than its shared ones.
    pub unique_weight: f64,
    pub min_keyword_mentions: usize,
    pub max_keyword_mentions: usize,
    pub max_generic_mentions: usize,
    pub min_filler_words: usize,
    pub max_filler_words: usize,
    /// Probability that a keyword mention is replaced by a filler word.
    pub noise_rate: f64,
    /// Explicit classes; when present they replace the generated ones.
    pub classes: Option<Vec<ClassSpec>>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            num_classes: 40,
            num_tasks: 10,
            notes_per_class: 200,
            train_fraction: 0.8,
            unique_keywords_per_class: 2,
            shared_keywords_per_class: 2,
            shared_pool_size: 30,
            unique_weight: 0.75,
            min_keyword_mentions: 2,
            max_keyword_mentions: 4,
            max_generic_mentions: 2,
            min_filler_words: 1,
            max_filler_words: 3,
            noise_rate: 0.1,
            classes: None,
        }
    }
}

const FILLER: &[&str] = &[
    "patient", "reports", "with", "and", "on", "since", "for", "noted", "at", "the", "presents", "after", "also",
];

const BODY_PARTS: &[&str] = &[
    "scalp", "chest", "abdomen", "left arm", "right arm", "left leg", "right leg", "throat", "back", "neck", "knee",
    "lower back", "upper abdomen", "eye", "ear",
];

const DURATIONS: &[&str] = &[
    "two days", "three days", "one week", "two weeks", "one month", "three months", "half a year",
];

const NEGATIONS: &[&str] = &["no", "denies", "without"];

const MODIFIERS: &[&str] = &["mild", "severe", "intermittent", "persistent", "sudden", "recurrent"];

const ONSETS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn pseudo_word(rng: &mut RngStream, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = 2 + rng.index(2);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(ONSETS[rng.index(ONSETS.len())]);
            w.push(VOWELS[rng.index(VOWELS.len())]);
        }
        if rng.bernoulli(0.3) {
            w.push(['n', 'r', 's', 'x'][rng.index(4)]);
        }
        if !FILLER.contains(&w.as_str()) && taken.insert(w.clone()) {
            return w;
        }
    }
}

/// Class name with its unique and shared keyword ids.
type ClassKeywords = (String, Vec<usize>, Vec<usize>);

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        let classes = self.classes.as_ref().map_or(self.num_classes, Vec::len);
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if self.notes_per_class < 2 {
            return Err(Error::Config("need at least 2 notes per class".into()));
        }
        if let Some(cs) = &self.classes {
            if let Some(c) = cs.iter().find(|c| c.keywords.is_empty()) {
                return Err(Error::Config(format!("class `{}` has no keywords", c.name)));
            }
        } else if self.unique_keywords_per_class + self.shared_keywords_per_class == 0 {
            return Err(Error::Config("classes have no keywords".into()));
        } else if self.shared_keywords_per_class > self.shared_pool_size {
            return Err(Error::Config("shared_keywords_per_class exceeds shared_pool_size".into()));
        }
        if self.min_keyword_mentions == 0 || self.min_keyword_mentions > self.max_keyword_mentions {
            return Err(Error::Config("keyword mention range must satisfy 1 ≤ min ≤ max".into()));
        }
        if self.min_filler_words > self.max_filler_words {
            return Err(Error::Config("filler word range must satisfy min ≤ max".into()));
        }
        for (name, p) in [("noise_rate", self.noise_rate), ("unique_weight", self.unique_weight)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Lexicon plus per-class `(unique, shared)` keyword ids.
    fn build_classes(&self, rng: &mut RngStream) -> Result<(EntityLexicon, Vec<ClassKeywords>)> {
        let mut lex = EntityLexicon::new();
        for s in BODY_PARTS {
            lex.insert(s, "body_part")?;
        }
        for s in DURATIONS {
            lex.insert(s, "duration")?;
        }
        for s in NEGATIONS {
            lex.insert(s, "negation")?;
        }
        for s in MODIFIERS {
            lex.insert(s, "modifier")?;
        }
        if let Some(cs) = &self.classes {
            let mut out = Vec::new();
            for c in cs {
                let ids = c
                    .keywords
                    .iter()
                    .map(|k| lex.insert(k, "symptom"))
                    .collect::<Result<Vec<_>>>()?;
                out.push((c.name.clone(), ids, Vec::new()));
            }
            return Ok((lex, out));
        }
        let mut taken = HashSet::new();
        let pool = (0..self.shared_pool_size)
            .map(|_| lex.insert(&pseudo_word(rng, &mut taken), "symptom"))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::new();
        for c in 0..self.num_classes {
            let unique = (0..self.unique_keywords_per_class)
                .map(|_| lex.insert(&pseudo_word(rng, &mut taken), "symptom"))
                .collect::<Result<Vec<_>>>()?;
            let shared = rng
                .sample_indices(pool.len(), self.shared_keywords_per_class)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            out.push((format!("disease-{c:02}"), unique, shared));
        }
        Ok((lex, out))
    }

    fn generic_ids(lex: &EntityLexicon) -> Vec<usize> {
        lex.entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.entity_type != "symptom")
            .map(|(i, _)| i)
            .collect()
    }
}

/// Draws a labelled corpus from `spec` and splits it into a task stream.
pub fn synthesize_stream(spec: &GeneratorSpec, rng: &mut RngStream) -> Result<TaskStream> {
    spec.validate()?;
    let mut class_rng = rng.derive("synth.classes", &[]);
    let (lexicon, classes) = spec.build_classes(&mut class_rng)?;
    let generic = GeneratorSpec::generic_ids(&lexicon);
    let mut note_rng = rng.derive("synth.notes", &[]);
    let mut records = Vec::with_capacity(classes.len() * spec.notes_per_class);
    for (name, unique, shared) in &classes {
        for i in 0..spec.notes_per_class {
            let text = sample_note(spec, &lexicon, unique, shared, &generic, &mut note_rng);
            records.push(RawRecord {
                text,
                label: name.clone(),
                source_id: format!("{name}/{i:04}"),
                entities: None,
            });
        }
    }
    let split = SplitConfig {
        num_tasks: spec.num_tasks,
        train_fraction: spec.train_fraction,
    };
    split_tasks(&records, &lexicon, split, &mut rng.derive("synth.split", &[]))
}

fn range(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.index(hi - lo + 1)
}

fn sample_note(
    spec: &GeneratorSpec,
    lex: &EntityLexicon,
    unique: &[usize],
    shared: &[usize],
    generic: &[usize],
    rng: &mut RngStream,
) -> String {
    let mut tokens: Vec<&str> = Vec::new();
    let mentions = range(rng, spec.min_keyword_mentions, spec.max_keyword_mentions);
    for _ in 0..mentions {
        if rng.bernoulli(spec.noise_rate) {
            tokens.push(FILLER[rng.index(FILLER.len())]);
            continue;
        }
        let use_unique = shared.is_empty() || (!unique.is_empty() && rng.bernoulli(spec.unique_weight));
        let pick = if use_unique { unique[rng.index(unique.len())] } else { shared[rng.index(shared.len())] };
        tokens.push(lex.surface(pick));
    }
    if !generic.is_empty() {
        for _ in 0..range(rng, 0, spec.max_generic_mentions) {
            tokens.push(lex.surface(generic[rng.index(generic.len())]));
        }
    }
    for _ in 0..range(rng, spec.min_filler_words, spec.max_filler_words) {
        tokens.push(FILLER[rng.index(FILLER.len())]);
    }
    rng.shuffle(&mut tokens);
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            num_classes: 8,
            num_tasks: 4,
            notes_per_class: 200,
            ..Default::default()
        }
    }

    #[test]
    fn note_count() {
        let s = synthesize_stream(&small(), &mut RngStream::new(1)).unwrap();
        let total: usize = s.tasks.iter().map(|t| t.train.len() + t.test.len()).sum();
        assert_eq!(total, 1600);
        assert_eq!(s.num_tasks(), 4);
    }

    #[test]
    fn zero_noise_always_mentions_a_keyword() {
        let spec = GeneratorSpec {
            noise_rate: 0.0,
            ..small()
        };
        let s = synthesize_stream(&spec, &mut RngStream::new(4)).unwrap();
        for t in &s.tasks {
            for n in t.train.iter().chain(&t.test) {
                assert!(
                    n.entity_ids.iter().any(|&e| s.lexicon.entries()[e].entity_type == "symptom"),
                    "{}",
                    n.text
                );
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = synthesize_stream(&small(), &mut RngStream::new(7)).unwrap();
        let b = synthesize_stream(&small(), &mut RngStream::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let one = GeneratorSpec {
            num_classes: 1,
            num_tasks: 1,
            ..Default::default()
        };
        assert!(matches!(synthesize_stream(&one, &mut RngStream::new(1)), Err(Error::Config(_))));
        let no_kw = GeneratorSpec {
            classes: Some(vec![
                ClassSpec {
                    name: "a".into(),
                    keywords: vec!["rash".into()],
                },
                ClassSpec {
                    name: "b".into(),
                    keywords: vec![],
                },
            ]),
            num_tasks: 1,
            ..Default::default()
        };
        assert!(matches!(synthesize_stream(&no_kw, &mut RngStream::new(1)), Err(Error::Config(_))));
    }

    #[test]
    fn explicit_classes() {
        let spec = GeneratorSpec {
            classes: Some(vec![
                ClassSpec {
                    name: "dermatitis".into(),
                    keywords: vec!["rash".into(), "itching".into()],
                },
                ClassSpec {
                    name: "bronchitis".into(),
                    keywords: vec!["cough".into(), "sputum".into()],
                },
            ]),
            num_tasks: 2,
            notes_per_class: 20,
            noise_rate: 0.0,
            ..Default::default()
        };
        let s = synthesize_stream(&spec, &mut RngStream::new(3)).unwrap();
        assert_eq!(s.num_tasks(), 2);
        let derm = s.label_names.iter().position(|n| n == "dermatitis").unwrap();
        let rash = s.lexicon.id("rash").unwrap();
        let itch = s.lexicon.id("itching").unwrap();
        for t in &s.tasks {
            for n in t.train.iter().filter(|n| n.label == derm) {
                assert!(n.entity_ids.contains(&rash) || n.entity_ids.contains(&itch));
            }
        }
    }
}
