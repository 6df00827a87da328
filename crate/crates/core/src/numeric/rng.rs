use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded ChaCha8 stream. Child streams are derived from the parent seed and
/// a label, so independent consumers never perturb each other's draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `label` and `indices`; independent of how many
    /// values were already drawn from `self`.
    pub fn derive(&self, label: &str, indices: &[u64]) -> RngStream {
        let mut s = splitmix(self.seed ^ fnv1a(label));
        for &i in indices {
            s = splitmix(s ^ splitmix(i));
        }
        RngStream::new(s)
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        // 53 random mantissa bits, platform independent.
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    /// Uniform index in `[0, n)`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        let n = n as u64;
        // Lemire-style rejection on 64-bit words.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform(0.0, 1.0) < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `amount` distinct indices from `[0, n)`, in draw order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        let amount = amount.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..amount {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(amount);
        pool
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_ignores_parent_position() {
        let a = RngStream::new(3);
        let mut b = RngStream::new(3);
        b.next_u64();
        let mut ca = a.derive("shuffle", &[1, 2]);
        let mut cb = b.derive("shuffle", &[1, 2]);
        assert_eq!(ca.next_u64(), cb.next_u64());
        let mut other = a.derive("shuffle", &[2, 1]);
        assert_ne!(a.derive("shuffle", &[1, 2]).next_u64(), other.next_u64());
    }

    #[test]
    fn sample_indices_distinct() {
        let mut r = RngStream::new(1);
        let mut s = r.sample_indices(50, 20);
        assert_eq!(s.len(), 20);
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 20);
        assert_eq!(r.sample_indices(5, 10).len(), 5);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = RngStream::new(11);
        for _ in 0..1000 {
            let u = r.uniform(-0.5, 0.5);
            assert!((-0.5..0.5).contains(&u));
        }
    }
}
