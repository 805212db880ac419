//! Seeded random streams.
//!
//! A stream is a ChaCha8 generator keyed by `(seed, stream id)`; ChaCha's
//! stream parameter gives independent sequences for distinct ids under the
//! same seed. Normal deviates use the Marsaglia polar transform with `libm`
//! so that generated matrices are bit-identical on every platform.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::bits::BitMatrix;
use crate::tensor::Tensor;

/// Deterministic random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            rng,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream under the same seed.
    pub fn sibling(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate (polar method; pairs are cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    /// Fair coin; `true` stands for +1.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Uniform integer in `0..n` (Lemire's nearly-divisionless method).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let mut m = (self.next_u64() as u128) * (n as u128);
        let mut lo = m as u64;
        if lo < n {
            let threshold = n.wrapping_neg() % n;
            while lo < threshold {
                m = (self.next_u64() as u128) * (n as u128);
                lo = m as u64;
            }
        }
        (m >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order (sparse partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut moved: HashMap<usize, usize> = HashMap::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            let vj = *moved.get(&j).unwrap_or(&j);
            let vi = *moved.get(&i).unwrap_or(&i);
            moved.insert(j, vi);
            out.push(vj);
        }
        out
    }

    /// Point drawn uniformly on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

/// SplitMix64 finalizer, used to derive child seeds from a root seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `rows x cols` matrix of i.i.d. standard normal entries, row-major.
pub fn gauss_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| rng.normal())
}

/// `rows x cols` packed matrix of i.i.d. fair +-1 entries.
pub fn rademacher_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(rows, cols);
    let full = cols / 64;
    let tail = cols % 64;
    for r in 0..rows {
        let words = m.row_words_mut(r);
        for w in words.iter_mut().take(full) {
            *w = rng.next_u64();
        }
        if tail > 0 {
            words[full] = rng.next_u64() & ((1u64 << tail) - 1);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream_is_reproducible() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(7, 4);
        let mut a = RngStream::new(7, 3);
        let same = (0..64).filter(|_| a.next_u64() == c.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = RngStream::new(1, 0);
        let mut hits = [0usize; 7];
        for _ in 0..7000 {
            hits[r.below(7) as usize] += 1;
        }
        assert!(hits.iter().all(|&h| h > 800 && h < 1200), "{hits:?}");
    }

    #[test]
    fn sample_indices_are_distinct() {
        let mut r = RngStream::new(2, 0);
        let mut idx = r.sample_indices(100, 60);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 60);
        assert!(idx.iter().all(|&i| i < 100));
        let all = r.sample_indices(10, 10);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn rademacher_padding_is_clean() {
        let mut r = RngStream::new(3, 1);
        let m = rademacher_matrix(&mut r, 5, 70);
        for i in 0..5 {
            assert!(m.row(i).padding_is_clean());
        }
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut r = RngStream::new(4, 0);
        let v = r.unit_vector(17);
        let n: f64 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
