//! Deterministic data-parallel helpers. Work is split into fixed-size chunks
//! whose results are combined in chunk order, so the sequential and rayon
//! paths produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for batch-level loops. Without the `parallel` feature,
/// [`Parallelism::Rayon`] runs sequentially.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

impl Parallelism {
    /// Applies `f` to consecutive chunks of `items` and returns the results in
    /// chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            Parallelism::Sequential => items.chunks(chunk).map(f).collect(),
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => items.par_chunks(chunk).map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            Parallelism::Rayon => items.chunks(chunk).map(f).collect(),
        }
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Parallelism::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => items.par_iter().map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            Parallelism::Rayon => items.iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_order_is_preserved() {
        let xs: Vec<f64> = (0..103).map(|i| (i as f64).sin()).collect();
        let f = |c: &[f64]| c.iter().sum::<f64>();
        let a = Parallelism::Sequential.map_chunks(&xs, 8, f);
        let b = Parallelism::Rayon.map_chunks(&xs, 8, f);
        assert_eq!(a, b);
        assert_eq!(a.len(), 13);
    }
}
