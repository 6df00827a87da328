use std::collections::HashSet;

use super::{CharVocab, EntityLexicon};
use crate::error::{Error, Result};

/// One tokenised training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Note {
    pub text: String,
    pub char_ids: Vec<usize>,
    pub entity_ids: Vec<usize>,
    /// Class id; equals the classifier output row for this class.
    pub label: usize,
    pub source_id: String,
}

/// An untokenised labelled note as supplied by a corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub text: String,
    pub label: String,
    pub source_id: String,
    /// Pre-extracted entity surfaces; `None` runs the lexicon matcher.
    pub entities: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    /// 1-based position in the stream.
    pub id: usize,
    pub labels: Vec<usize>,
    pub train: Vec<Note>,
    pub test: Vec<Note>,
}

/// Ordered tasks with pairwise-disjoint label sets. Class ids are numbered
/// contiguously in task order, so the classes seen up to task `k` are exactly
/// `0..accumulated_labels(k)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub char_vocab: CharVocab,
    pub lexicon: EntityLexicon,
    pub label_names: Vec<String>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// `|Y_{:k}| = Σ_{j≤k} |Y_j|` for 1-based `k`.
    pub fn accumulated_labels(&self, k: usize) -> usize {
        self.tasks.iter().take(k).map(|t| t.labels.len()).sum()
    }

    pub fn task(&self, k: usize) -> &Task {
        &self.tasks[k - 1]
    }

    /// Checks every structural invariant of the stream.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut next = 0;
        for (pos, task) in self.tasks.iter().enumerate() {
            if task.id != pos + 1 {
                return Err(Error::Validation(format!("task at position {} has id {}", pos + 1, task.id)));
            }
            if task.labels.is_empty() {
                return Err(Error::Validation(format!("task {} has an empty label set", task.id)));
            }
            for &l in &task.labels {
                if !seen.insert(l) {
                    return Err(Error::Validation(format!(
                        "label `{}` appears in more than one task; label sets must be pairwise disjoint",
                        self.label_names.get(l).map_or("?", String::as_str)
                    )));
                }
                if l != next {
                    return Err(Error::Validation(format!(
                        "class ids must be contiguous in task order (expected {next}, found {l})"
                    )));
                }
                next += 1;
            }
            for note in task.train.iter().chain(&task.test) {
                self.validate_note(note, task)?;
            }
        }
        if next != self.label_names.len() {
            return Err(Error::Validation(format!(
                "{} label names but {next} labels assigned to tasks",
                self.label_names.len()
            )));
        }
        Ok(())
    }

    fn validate_note(&self, note: &Note, task: &Task) -> Result<()> {
        if note.char_ids.is_empty() {
            return Err(Error::Validation(format!("note `{}` has no characters", note.source_id)));
        }
        if !task.labels.contains(&note.label) {
            return Err(Error::Validation(format!(
                "note `{}` has label {} outside task {}'s label set",
                note.source_id, note.label, task.id
            )));
        }
        if let Some(&bad) = note.char_ids.iter().find(|&&c| c >= self.char_vocab.len()) {
            return Err(Error::Validation(format!("note `{}` has char id {bad} out of range", note.source_id)));
        }
        if let Some(&bad) = note.entity_ids.iter().find(|&&e| e >= self.lexicon.len()) {
            return Err(Error::Validation(format!("note `{}` has entity id {bad} out of range", note.source_id)));
        }
        Ok(())
    }

    /// Training notes of tasks `1..=k`.
    pub fn train_union(&self, k: usize) -> Vec<&Note> {
        self.tasks.iter().take(k).flat_map(|t| t.train.iter()).collect()
    }
}
