use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::stream::Note;

/// Per-task stores of past training notes with a fixed per-task budget.
#[derive(Clone, Debug, Default)]
pub struct EpisodicMemory {
    budget: usize,
    per_task: BTreeMap<usize, Vec<Note>>,
}

impl EpisodicMemory {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            per_task: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Stores `min(B, |train|)` notes drawn uniformly without replacement.
    pub fn write_memory(&mut self, task_id: usize, train: &[Note], rng: &mut RngStream) -> Result<()> {
        if self.per_task.contains_key(&task_id) {
            return Err(Error::MemoryAlreadyWritten(task_id));
        }
        let picked = rng.sample_indices(train.len(), self.budget);
        self.per_task
            .insert(task_id, picked.into_iter().map(|i| train[i].clone()).collect());
        Ok(())
    }

    /// `|M_{:k}|`: notes stored over all tasks written so far.
    pub fn total(&self) -> usize {
        self.per_task.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn task(&self, task_id: usize) -> Option<&[Note]> {
        self.per_task.get(&task_id).map(Vec::as_slice)
    }

    pub fn num_tasks(&self) -> usize {
        self.per_task.len()
    }

    /// All stored notes, ordered by task then insertion.
    pub fn iter(&self) -> impl Iterator<Item = &Note> {
        self.per_task.values().flatten()
    }

    /// Uniform sample of `min(size, |M|)` distinct stored notes. An empty
    /// memory yields an empty batch without touching `rng`.
    pub fn sample_replay_batch(&self, size: usize, rng: &mut RngStream) -> Vec<&Note> {
        let total = self.total();
        if total == 0 || size == 0 {
            return Vec::new();
        }
        let all: Vec<&Note> = self.iter().collect();
        rng.sample_indices(total, size).into_iter().map(|i| all[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn notes(n: usize, label: usize) -> Vec<Note> {
        (0..n)
            .map(|i| Note {
                text: format!("n{i}"),
                char_ids: vec![1],
                entity_ids: vec![],
                label,
                source_id: format!("{label}-{i}"),
            })
            .collect()
    }

    #[test]
    fn budget_is_clamped() {
        let mut m = EpisodicMemory::new(128);
        m.write_memory(1, &notes(4000, 0), &mut RngStream::new(0)).unwrap();
        m.write_memory(2, &notes(50, 1), &mut RngStream::new(0)).unwrap();
        assert_eq!(m.task(1).unwrap().len(), 128);
        assert_eq!(m.task(2).unwrap().len(), 50);
    }

    #[test]
    fn accounting_after_four_tasks() {
        let mut m = EpisodicMemory::new(128);
        for t in 1..=4 {
            m.write_memory(t, &notes(300, t), &mut RngStream::new(t as u64)).unwrap();
        }
        assert_eq!(m.total(), 512);
    }

    #[test]
    fn duplicate_task_rejected() {
        let mut m = EpisodicMemory::new(4);
        m.write_memory(1, &notes(10, 0), &mut RngStream::new(0)).unwrap();
        assert!(matches!(
            m.write_memory(1, &notes(10, 0), &mut RngStream::new(0)),
            Err(Error::MemoryAlreadyWritten(1))
        ));
    }

    #[test]
    fn stored_notes_are_distinct_and_deterministic() {
        let src = notes(100, 3);
        let mut a = EpisodicMemory::new(20);
        let mut b = EpisodicMemory::new(20);
        a.write_memory(1, &src, &mut RngStream::new(5)).unwrap();
        b.write_memory(1, &src, &mut RngStream::new(5)).unwrap();
        assert_eq!(a.task(1), b.task(1));
        let mut ids: Vec<&str> = a.task(1).unwrap().iter().map(|n| n.source_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn replay_sampling() {
        let mut m = EpisodicMemory::new(128);
        assert!(m.sample_replay_batch(32, &mut RngStream::new(0)).is_empty());
        for t in 1..=4 {
            m.write_memory(t, &notes(200, t), &mut RngStream::new(t as u64)).unwrap();
        }
        let a = m.sample_replay_batch(32, &mut RngStream::new(9));
        let b = m.sample_replay_batch(32, &mut RngStream::new(9));
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
        let labels: std::collections::HashSet<usize> = m
            .sample_replay_batch(200, &mut RngStream::new(1))
            .iter()
            .map(|n| n.label)
            .collect();
        assert!(labels.len() > 1);
        assert_eq!(m.sample_replay_batch(10_000, &mut RngStream::new(1)).len(), 512);
    }

    #[test]
    fn zero_budget_stores_nothing() {
        let mut m = EpisodicMemory::new(0);
        m.write_memory(1, &notes(10, 0), &mut RngStream::new(0)).unwrap();
        assert_eq!(m.total(), 0);
        assert_eq!(m.num_tasks(), 1);
    }
}
