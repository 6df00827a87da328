use std::collections::BTreeMap;

use super::{CharVocab, EntityLexicon, Note, RawRecord, Task, TaskStream};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitConfig {
    pub num_tasks: usize,
    /// Fraction of each class assigned to training.
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            num_tasks: 10,
            train_fraction: 0.8,
        }
    }
}

/// Shuffles the distinct labels, partitions them into `num_tasks` equal
/// groups, splits each class into train/test, builds the character
/// vocabulary from training text only and tokenises everything.
pub fn split_tasks(
    records: &[RawRecord],
    lexicon: &EntityLexicon,
    config: SplitConfig,
    rng: &mut RngStream,
) -> Result<TaskStream> {
    if config.num_tasks == 0 {
        return Err(Error::Config("num_tasks must be positive".into()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {}",
            config.train_fraction
        )));
    }
    // BTreeMap keeps label iteration independent of hashing.
    let mut by_label: BTreeMap<&str, Vec<&RawRecord>> = BTreeMap::new();
    for r in records {
        by_label.entry(r.label.as_str()).or_default().push(r);
    }
    let mut labels: Vec<&str> = by_label.keys().copied().collect();
    if labels.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if !labels.len().is_multiple_of(config.num_tasks) {
        return Err(Error::Config(format!(
            "{} distinct labels cannot be split evenly into {} tasks",
            labels.len(),
            config.num_tasks
        )));
    }
    rng.shuffle(&mut labels);
    let per_task = labels.len() / config.num_tasks;

    let mut split: Vec<(Vec<&RawRecord>, Vec<&RawRecord>)> = Vec::with_capacity(labels.len());
    for &l in &labels {
        let mut members = by_label[l].clone();
        rng.shuffle(&mut members);
        let n_train = ((members.len() as f64) * config.train_fraction).round() as usize;
        let n_train = n_train.clamp(1.min(members.len()), members.len());
        let test = members.split_off(n_train);
        split.push((members, test));
    }

    let vocab = CharVocab::build(split.iter().flat_map(|(train, _)| train.iter().map(|r| r.text.as_str())));
    let label_names: Vec<String> = labels.iter().map(|s| s.to_string()).collect();

    let mut tasks = Vec::with_capacity(config.num_tasks);
    for k in 0..config.num_tasks {
        let ids: Vec<usize> = (k * per_task..(k + 1) * per_task).collect();
        let mut task = Task {
            id: k + 1,
            labels: ids.clone(),
            train: Vec::new(),
            test: Vec::new(),
        };
        for &id in &ids {
            for r in &split[id].0 {
                task.train.push(make_note(r, id, &vocab, lexicon)?);
            }
            for r in &split[id].1 {
                task.test.push(make_note(r, id, &vocab, lexicon)?);
            }
        }
        tasks.push(task);
    }
    let stream = TaskStream {
        tasks,
        char_vocab: vocab,
        lexicon: lexicon.clone(),
        label_names,
    };
    stream.validate()?;
    Ok(stream)
}

pub(crate) fn make_note(r: &RawRecord, label: usize, vocab: &CharVocab, lexicon: &EntityLexicon) -> Result<Note> {
    let char_ids = vocab.tokenize(&r.text)?;
    let entity_ids = match &r.entities {
        Some(list) => list
            .iter()
            .map(|s| {
                lexicon
                    .id(s)
                    .ok_or_else(|| Error::Validation(format!("entity `{s}` of note `{}` is not in the lexicon", r.source_id)))
            })
            .collect::<Result<Vec<_>>>()?,
        None => lexicon.extract(&r.text),
    };
    Ok(Note {
        text: r.text.clone(),
        char_ids,
        entity_ids,
        label,
        source_id: r.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(classes: usize, per_class: usize) -> Vec<RawRecord> {
        (0..classes)
            .flat_map(|c| {
                (0..per_class).map(move |i| RawRecord {
                    text: format!("note {i} of class {c}"),
                    label: format!("disease-{c:02}"),
                    source_id: format!("{c}-{i}"),
                    entities: None,
                })
            })
            .collect()
    }

    #[test]
    fn forty_classes_ten_tasks() {
        let s = split_tasks(&records(40, 5), &EntityLexicon::new(), SplitConfig::default(), &mut RngStream::new(1)).unwrap();
        assert_eq!(s.num_tasks(), 10);
        assert!(s.tasks.iter().all(|t| t.labels.len() == 4));
        assert_eq!(s.accumulated_labels(3), 12);
        assert_eq!(s.accumulated_labels(10), 40);
    }

    #[test]
    fn single_task_holds_all_classes() {
        let cfg = SplitConfig {
            num_tasks: 1,
            ..Default::default()
        };
        let s = split_tasks(&records(4, 10), &EntityLexicon::new(), cfg, &mut RngStream::new(1)).unwrap();
        assert_eq!(s.tasks[0].labels, vec![0, 1, 2, 3]);
        assert_eq!(s.tasks[0].train.len(), 32);
        assert_eq!(s.tasks[0].test.len(), 8);
    }

    #[test]
    fn same_seed_same_split() {
        let r = records(8, 6);
        let cfg = SplitConfig {
            num_tasks: 4,
            ..Default::default()
        };
        let a = split_tasks(&r, &EntityLexicon::new(), cfg, &mut RngStream::new(9)).unwrap();
        let b = split_tasks(&r, &EntityLexicon::new(), cfg, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        let c = split_tasks(&r, &EntityLexicon::new(), cfg, &mut RngStream::new(10)).unwrap();
        assert_ne!(a.label_names, c.label_names);
    }

    #[test]
    fn indivisible_labels_rejected() {
        let cfg = SplitConfig {
            num_tasks: 3,
            ..Default::default()
        };
        let err = split_tasks(&records(4, 3), &EntityLexicon::new(), cfg, &mut RngStream::new(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn vocabulary_comes_from_training_text_only() {
        let mut r = records(2, 10);
        r.push(RawRecord {
            text: "Ω".into(),
            label: "disease-00".into(),
            source_id: "x".into(),
            entities: None,
        });
        let cfg = SplitConfig {
            num_tasks: 1,
            train_fraction: 0.5,
        };
        let s = split_tasks(&r, &EntityLexicon::new(), cfg, &mut RngStream::new(2)).unwrap();
        let in_train = s.tasks[0].train.iter().any(|n| n.text == "Ω");
        assert_eq!(s.char_vocab.id('Ω') != 0, in_train);
    }
}
