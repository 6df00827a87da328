use crate::error::{Error, Result};
use crate::model::DualEncoderModel;
use crate::numeric::{cosine, Parallelism, RngStream};
use crate::stream::Note;

/// Fraction of `test` whose argmax over every class seen so far equals the
/// label.
pub fn evaluate_task(model: &DualEncoderModel, test: &[Note], par: Parallelism) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let hits = par.map_chunks(test, crate::model::GRAD_CHUNK, |chunk| -> Result<usize> {
        let mut hits = 0;
        for n in chunk {
            if model.predict(n)? == n.label {
                hits += 1;
            }
        }
        Ok(hits)
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / test.len() as f64)
}

/// Mean cosine over all unordered pairs of `vectors`; `None` below two.
pub fn mean_pairwise_cosine(vectors: &[Vec<f64>]) -> Option<f64> {
    let m = vectors.len();
    if m < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            sum += cosine(&vectors[i], &vectors[j]);
        }
    }
    Some(sum / (m * (m - 1) / 2) as f64)
}

/// Mean over notes of the mean pairwise cosine among each note's aligned
/// entity embeddings. Notes with fewer than two entities are skipped.
pub fn aggregation_degree(model: &DualEncoderModel, notes: &[&Note]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for n in notes {
        if n.entity_ids.len() < 2 {
            continue;
        }
        if let Some(c) = mean_pairwise_cosine(&model.entity_states(n, false)?) {
            total += c;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "aggregation degree needs a note with at least two entities".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Up to `size` notes with at least two entities, drawn without replacement.
pub fn aggregation_sample<'a>(test: &'a [Note], size: usize, rng: &mut RngStream) -> Vec<&'a Note> {
    let eligible: Vec<&Note> = test.iter().filter(|n| n.entity_ids.len() >= 2).collect();
    rng.sample_indices(eligible.len(), size)
        .into_iter()
        .map(|i| eligible[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_cosine_examples() {
        assert_eq!(mean_pairwise_cosine(&vec![vec![1.0, 2.0]; 4]).map(|c| (c - 1.0).abs() < 1e-12), Some(true));
        assert_eq!(mean_pairwise_cosine(&[vec![1.0, 0.0], vec![0.0, 3.0]]), Some(0.0));
        let pts = [vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]];
        // cos(0°,45°) + cos(0°,90°) + cos(45°,90°)
        let want = (0.5f64.sqrt() + 0.0 + 0.5f64.sqrt()) / 3.0;
        assert!((mean_pairwise_cosine(&pts).unwrap() - want).abs() < 1e-12);
        assert_eq!(mean_pairwise_cosine(&[vec![1.0]]), None);
    }
}
